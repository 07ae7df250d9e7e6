//! Software stand-in for the microphone, seven-band spectrum analyzer and
//! ADC chain.
//!
//! Audio is streamed through a bank of band-pass biquads whose rectified
//! outputs drive peak envelopes. Every 5 ms tick the envelopes are read out
//! as 12-bit amplitudes, producing one [`BandFrame`].

mod bank;
pub mod biquad;
pub mod periodicity;
pub mod wav;

pub use bank::{design_filter_bank, quantize, Band, FilterBank};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_BANDS: usize = 7;
pub const BAND_CENTERS_HZ: [f64; NUM_BANDS] = [63.0, 160.0, 400.0, 1000.0, 2500.0, 6250.0, 16000.0];
pub const ADC_MAX: u16 = 4095;
pub const TICK_MS: u32 = 5;
pub const TICKS_PER_SECOND: u32 = 1000 / TICK_MS;
/// Lowest rate that still represents the 16 kHz band.
pub const MIN_SAMPLE_RATE_HZ: u32 = 32_000;
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 44_100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzerError {
    #[error("sample rate {0} Hz is below the 32 kHz minimum needed for the 16 kHz band")]
    SampleRateTooLow(u32),
    #[error("invalid analyzer parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("clip sample rate {clip} Hz does not match analyzer rate {analyzer} Hz (resampling is not supported)")]
    RateMismatch { clip: u32, analyzer: u32 },
}

/// Mono PCM audio with every sample in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    /// Builds a clip, clipping out-of-range samples to full scale.
    pub fn new(mut samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AnalyzerError> {
        if sample_rate_hz < MIN_SAMPLE_RATE_HZ {
            return Err(AnalyzerError::SampleRateTooLow(sample_rate_hz));
        }
        for s in &mut samples {
            *s = if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) };
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(duration_s: f64, sample_rate_hz: u32) -> Result<Self, AnalyzerError> {
        let n = (duration_s * f64::from(sample_rate_hz)).round() as usize;
        Self::new(vec![0.0; n], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Samples in `[start_s, start_s + len_s)`, clamped to the clip.
    pub fn slice_seconds(&self, start_s: f64, len_s: f64) -> AudioClip {
        let rate = f64::from(self.sample_rate_hz);
        let a = ((start_s * rate).round() as usize).min(self.samples.len());
        let b = (((start_s + len_s) * rate).round() as usize).min(self.samples.len());
        AudioClip {
            samples: self.samples[a..b].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Seven 12-bit band amplitudes read out at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandFrame {
    pub amplitudes: [u16; NUM_BANDS],
    pub tick_index: u64,
}

impl BandFrame {
    pub fn new(amplitudes: [u16; NUM_BANDS], tick_index: u64) -> Self {
        Self {
            amplitudes: amplitudes.map(|a| a.min(ADC_MAX)),
            tick_index,
        }
    }

    pub fn sum(&self) -> u32 {
        self.amplitudes.iter().map(|&a| u32::from(a)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub sample_rate_hz: u32,
    pub q: f64,
    pub release_ms: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            q: 4.0,
            release_ms: 15.0,
        }
    }
}

/// Maps ticks to sample boundaries with an accumulated fraction so that the
/// long-run tick rate is exactly 200 Hz (220/221-sample hops at 44.1 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickScheduler {
    sample_rate_hz: u32,
}

impl TickScheduler {
    pub fn new(sample_rate_hz: u32) -> Self {
        Self { sample_rate_hz }
    }

    /// Absolute sample index (exclusive) at which tick `tick` is read out.
    pub fn tick_end(&self, tick: u64) -> u64 {
        (tick + 1) * u64::from(self.sample_rate_hz) / u64::from(TICKS_PER_SECOND)
    }

    /// Number of complete ticks contained in `num_samples`.
    pub fn ticks_in(&self, num_samples: u64) -> u64 {
        num_samples * u64::from(TICKS_PER_SECOND) / u64::from(self.sample_rate_hz)
    }
}

/// Streaming analyzer: filter bank plus tick scheduling.
#[derive(Debug, Clone)]
pub struct BandAnalyzer {
    bank: FilterBank,
    scheduler: TickScheduler,
    consumed: u64,
    next_tick: u64,
}

impl BandAnalyzer {
    pub fn new(config: &AnalyzerConfig) -> Result<Self, AnalyzerError> {
        let bank = design_filter_bank(config.sample_rate_hz, config.q, config.release_ms)?;
        Ok(Self {
            bank,
            scheduler: TickScheduler::new(config.sample_rate_hz),
            consumed: 0,
            next_tick: 0,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.bank.sample_rate_hz()
    }

    pub fn ticks_emitted(&self) -> u64 {
        self.next_tick
    }

    /// Consumes `samples`, invoking `on_frame` for every tick boundary crossed.
    pub fn feed_with<F: FnMut(BandFrame)>(&mut self, mut samples: &[f32], mut on_frame: F) {
        while !samples.is_empty() {
            let boundary = self.scheduler.tick_end(self.next_tick);
            let take = ((boundary - self.consumed) as usize).min(samples.len());
            let (head, tail) = samples.split_at(take);
            self.bank.process_block(head);
            self.consumed += take as u64;
            samples = tail;
            if self.consumed == boundary {
                on_frame(self.bank.sample_bands(self.next_tick));
                self.next_tick += 1;
            }
        }
    }

    pub fn feed(&mut self, samples: &[f32]) -> Vec<BandFrame> {
        let mut out = Vec::new();
        self.feed_with(samples, |f| out.push(f));
        out
    }
}

/// Runs a whole clip through a fresh analyzer: `floor(duration / 5 ms)` frames.
pub fn analyze_clip(clip: &AudioClip, config: &AnalyzerConfig) -> Result<Vec<BandFrame>, AnalyzerError> {
    if clip.sample_rate_hz() != config.sample_rate_hz {
        return Err(AnalyzerError::RateMismatch {
            clip: clip.sample_rate_hz(),
            analyzer: config.sample_rate_hz,
        });
    }
    let mut analyzer = BandAnalyzer::new(config)?;
    let mut frames = Vec::with_capacity(
        TickScheduler::new(config.sample_rate_hz).ticks_in(clip.len() as u64) as usize,
    );
    analyzer.feed_with(clip.samples(), |f| frames.push(f));
    Ok(frames)
}
