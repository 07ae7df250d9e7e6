//! Synthetic drumming and interference audio.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::DatasetError;
use crate::analyzer::biquad::{Biquad, BiquadCoeffs};
use crate::analyzer::{AudioClip, DEFAULT_SAMPLE_RATE_HZ, TICK_MS};

pub const CLIP_SECONDS: f64 = 3.0;

/// A woodpecker drumming burst: a train of short broadband strikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrummingParams {
    /// Strikes per second, 15 to 30.
    pub strike_rate_hz: f64,
    /// 0.2 to 2.0 s.
    pub burst_duration_s: f64,
    /// Length of each damped noise strike, 3 to 8 ms.
    pub strike_ms: f64,
    /// Peak strike amplitude in (0, 1].
    pub amplitude: f64,
    /// Per-strike timing noise as a fraction of the period, 0 to 0.2.
    pub jitter: f64,
    /// Ambient noise level mixed under the burst.
    pub background_level: f64,
}

impl Default for DrummingParams {
    fn default() -> Self {
        Self {
            strike_rate_hz: 25.0,
            burst_duration_s: 2.0,
            strike_ms: 5.0,
            amplitude: 0.8,
            jitter: 0.05,
            background_level: 0.0,
        }
    }
}

impl DrummingParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(DatasetError::InvalidParams(what.to_owned()))
            }
        };
        check((15.0..=30.0).contains(&self.strike_rate_hz), "strike_rate_hz must be in [15, 30]")?;
        check((0.2..=2.0).contains(&self.burst_duration_s), "burst_duration_s must be in [0.2, 2.0]")?;
        check((3.0..=8.0).contains(&self.strike_ms), "strike_ms must be in [3, 8]")?;
        check(self.amplitude > 0.0 && self.amplitude <= 1.0, "amplitude must be in (0, 1]")?;
        check((0.0..=0.2).contains(&self.jitter), "jitter must be in [0, 0.2]")?;
        check((0.0..=1.0).contains(&self.background_level), "background_level must be in [0, 1]")?;
        // strikes must stay resolvable at 5 ms sampling
        check(1000.0 / self.strike_rate_hz >= 2.0 * f64::from(TICK_MS), "strike period below two ticks")
    }

    /// Randomized parameters covering the species-like variation range.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self {
            strike_rate_hz: rng.random_range(15.0..=30.0),
            burst_duration_s: rng.random_range(0.2..=2.0),
            strike_ms: rng.random_range(3.0..=8.0),
            amplitude: rng.random_range(0.2..=1.0),
            jitter: rng.random_range(0.0..=0.1),
            background_level: rng.random_range(0.0..=0.05),
        }
    }

    pub fn strike_count(&self) -> usize {
        (self.strike_rate_hz * self.burst_duration_s - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NegativeKind {
    WhiteNoise,
    PinkNoise,
    SteadyTone { freq_hz: f64 },
    /// Isolated knocks below 8 Hz.
    SlowKnock { rate_hz: f64 },
    Silence,
}

impl NegativeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NegativeKind::WhiteNoise => "white_noise",
            NegativeKind::PinkNoise => "pink_noise",
            NegativeKind::SteadyTone { .. } => "steady_tone",
            NegativeKind::SlowKnock { .. } => "slow_knock",
            NegativeKind::Silence => "silence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeParams {
    #[serde(flatten)]
    pub kind: NegativeKind,
    /// Signal level in [0, 1].
    pub level: f64,
}

impl NegativeParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(DatasetError::InvalidParams("level must be in [0, 1]".into()));
        }
        match self.kind {
            NegativeKind::SlowKnock { rate_hz } if !(rate_hz > 0.0 && rate_hz < 8.0) => {
                Err(DatasetError::InvalidParams("slow_knock rate must be in (0, 8) Hz".into()))
            }
            NegativeKind::SteadyTone { freq_hz } if !(20.0..=20_000.0).contains(&freq_hz) => {
                Err(DatasetError::InvalidParams("tone frequency must be in [20, 20000] Hz".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let kind = match rng.random_range(0..5) {
            0 => NegativeKind::WhiteNoise,
            1 => NegativeKind::PinkNoise,
            2 => NegativeKind::SteadyTone {
                freq_hz: 10f64.powf(rng.random_range(80f64.log10()..12_000f64.log10())),
            },
            3 => NegativeKind::SlowKnock {
                rate_hz: rng.random_range(1.0..=5.0),
            },
            _ => NegativeKind::Silence,
        };
        Self {
            kind,
            level: rng.random_range(0.05..=0.8),
        }
    }
}

fn white<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn add_white<R: Rng>(buf: &mut [f64], level: f64, rng: &mut R) {
    if level > 0.0 {
        buf.iter_mut().for_each(|s| *s += level * white(rng));
    }
}

/// Paul Kellett's economy pink filter over white noise, scaled to roughly
/// `level` peak.
fn add_pink<R: Rng>(buf: &mut [f64], level: f64, rng: &mut R) {
    if level <= 0.0 {
        return;
    }
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for s in buf.iter_mut() {
        let w = white(rng);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        *s += level * 0.25 * (b0 + b1 + b2 + w * 0.1848);
    }
}

/// Exponentially damped noise burst band-limited to `[lo_hz, hi_hz]`,
/// normalized to a peak of `amplitude`.
fn strike<R: Rng>(len_ms: f64, lo_hz: f64, hi_hz: f64, amplitude: f64, rate: u32, rng: &mut R) -> Vec<f64> {
    let fs = f64::from(rate);
    let n = ((len_ms * 1e-3 * fs).round() as usize).max(1);
    let tau = n as f64 / 5.0;
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let mut hp = Biquad::new(BiquadCoeffs::high_pass(lo_hz, q, fs));
    let mut lp = Biquad::new(BiquadCoeffs::low_pass(hi_hz, q, fs));
    let mut out: Vec<f64> = (0..n)
        .map(|i| lp.tick(hp.tick(white(rng) * (-(i as f64) / tau).exp())))
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= amplitude / peak);
    }
    out
}

fn mix_at(buf: &mut [f64], at: usize, src: &[f64]) {
    for (d, s) in buf.iter_mut().skip(at).zip(src) {
        *d += s;
    }
}

fn to_clip(buf: Vec<f64>, rate: u32) -> AudioClip {
    AudioClip::new(buf.into_iter().map(|v| v as f32).collect(), rate).expect("synthesis rate is valid")
}

/// Adds one drumming burst starting at `onset_s`; returns strike onsets in
/// seconds.
pub fn add_drumming<R: Rng>(buf: &mut [f64], rate: u32, onset_s: f64, p: &DrummingParams, rng: &mut R) -> Vec<f64> {
    let period = 1.0 / p.strike_rate_hz;
    let fs = f64::from(rate);
    (0..p.strike_count())
        .map(|k| {
            let t = onset_s + k as f64 * period + p.jitter * period * rng.random_range(-0.5..0.5);
            let t = t.max(0.0);
            let s = strike(p.strike_ms, 500.0, 8000.0, p.amplitude, rate, rng);
            mix_at(buf, (t * fs).round() as usize, &s);
            t
        })
        .collect()
}

/// `duration_s` of audio with one burst at `onset_s` over ambient noise.
pub fn synth_drumming_at(
    p: &DrummingParams,
    duration_s: f64,
    onset_s: f64,
    seed: u64,
) -> Result<AudioClip, DatasetError> {
    p.validate()?;
    let rate = DEFAULT_SAMPLE_RATE_HZ;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; (duration_s * f64::from(rate)).round() as usize];
    add_pink(&mut buf, p.background_level, &mut rng);
    add_drumming(&mut buf, rate, onset_s, p, &mut rng);
    Ok(to_clip(buf, rate))
}

/// A 3 s clip with one drumming burst at a random offset that keeps the
/// whole burst inside the clip.
pub fn synth_drumming(p: &DrummingParams, seed: u64) -> Result<AudioClip, DatasetError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5e7);
    let slack = (CLIP_SECONDS - p.burst_duration_s - p.strike_ms * 1e-3 - 0.01).max(0.0);
    let onset = rng.random_range(0.0..=slack);
    synth_drumming_at(p, CLIP_SECONDS, onset, seed)
}

pub fn synth_negative_clip(p: &NegativeParams, duration_s: f64, seed: u64) -> Result<AudioClip, DatasetError> {
    p.validate()?;
    let rate = DEFAULT_SAMPLE_RATE_HZ;
    let fs = f64::from(rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; (duration_s * fs).round() as usize];
    match p.kind {
        NegativeKind::Silence => {}
        NegativeKind::WhiteNoise => add_white(&mut buf, p.level, &mut rng),
        NegativeKind::PinkNoise => add_pink(&mut buf, p.level, &mut rng),
        NegativeKind::SteadyTone { freq_hz } => {
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, s) in buf.iter_mut().enumerate() {
                *s += p.level * (2.0 * PI * freq_hz * i as f64 / fs + phase).sin();
            }
            add_pink(&mut buf, 0.02 * p.level, &mut rng);
        }
        NegativeKind::SlowKnock { rate_hz } => {
            add_pink(&mut buf, 0.05 * p.level, &mut rng);
            let period = 1.0 / rate_hz;
            let mut t = rng.random_range(0.0..period);
            while t < duration_s {
                let len = rng.random_range(5.0..=15.0);
                let s = strike(len, 200.0, 4000.0, p.level, rate, &mut rng);
                mix_at(&mut buf, (t * fs).round() as usize, &s);
                t += period * (1.0 + 0.03 * rng.random_range(-1.0..1.0));
            }
        }
    }
    Ok(to_clip(buf, rate))
}

/// A 3 s interference clip.
pub fn synth_negative(p: &NegativeParams, seed: u64) -> Result<AudioClip, DatasetError> {
    synth_negative_clip(p, CLIP_SECONDS, seed)
}
