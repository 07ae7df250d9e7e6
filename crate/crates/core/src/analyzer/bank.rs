use super::biquad::{Biquad, BiquadCoeffs};
use super::{AnalyzerError, BandFrame, ADC_MAX, BAND_CENTERS_HZ, MIN_SAMPLE_RATE_HZ, NUM_BANDS};

/// One resonant section of the bank.
#[derive(Debug, Clone)]
pub struct Band {
    pub center_hz: f64,
    pub q: f64,
    filter: Biquad,
}

impl Band {
    pub fn coeffs(&self) -> &BiquadCoeffs {
        self.filter.coeffs()
    }
}

/// Seven parallel band-pass sections, each followed by a peak-tracking
/// envelope with instantaneous attack and exponential release.
#[derive(Debug, Clone)]
pub struct FilterBank {
    bands: [Band; NUM_BANDS],
    envelopes: [f64; NUM_BANDS],
    sample_rate_hz: u32,
    release_ms: f64,
    /// Per-sample release multiplier, `exp(-1 / (fs * tau))`.
    decay: f64,
}

pub fn design_filter_bank(
    sample_rate_hz: u32,
    q: f64,
    release_ms: f64,
) -> Result<FilterBank, AnalyzerError> {
    if sample_rate_hz < MIN_SAMPLE_RATE_HZ {
        return Err(AnalyzerError::SampleRateTooLow(sample_rate_hz));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(AnalyzerError::InvalidParameter("q must be positive"));
    }
    if !(release_ms.is_finite() && release_ms > 0.0) {
        return Err(AnalyzerError::InvalidParameter("release_ms must be positive"));
    }
    let fs = f64::from(sample_rate_hz);
    let bands = BAND_CENTERS_HZ.map(|center_hz| Band {
        center_hz,
        q,
        filter: Biquad::new(BiquadCoeffs::band_pass(center_hz, q, fs)),
    });
    Ok(FilterBank {
        bands,
        envelopes: [0.0; NUM_BANDS],
        sample_rate_hz,
        release_ms,
        decay: (-1.0 / (fs * release_ms * 1e-3)).exp(),
    })
}

impl FilterBank {
    pub fn bands(&self) -> &[Band; NUM_BANDS] {
        &self.bands
    }

    pub fn envelopes(&self) -> &[f64; NUM_BANDS] {
        &self.envelopes
    }

    pub fn set_envelopes(&mut self, envelopes: [f64; NUM_BANDS]) {
        self.envelopes = envelopes.map(|e| e.max(0.0));
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn release_ms(&self) -> f64 {
        self.release_ms
    }

    /// Per-sample release factor.
    pub fn decay_per_sample(&self) -> f64 {
        self.decay
    }

    /// True when every filter has settled to exactly zero state.
    pub fn filters_quiescent(&self) -> bool {
        self.bands.iter().all(|b| b.filter.is_quiescent())
    }

    /// Streams `samples` through every band. Causal, so splitting a block
    /// anywhere yields the same end state.
    pub fn process_block(&mut self, samples: &[f32]) {
        for (band, env) in self.bands.iter_mut().zip(self.envelopes.iter_mut()) {
            let mut e = *env;
            for &x in samples {
                let y = band.filter.tick(f64::from(x)).abs();
                e *= self.decay;
                if y > e {
                    e = y;
                }
            }
            *env = e;
        }
    }

    /// ADC read-out of the current envelopes. Envelopes are not reset.
    pub fn sample_bands(&self, tick_index: u64) -> BandFrame {
        BandFrame {
            amplitudes: self.envelopes.map(quantize),
            tick_index,
        }
    }

    pub fn reset(&mut self) {
        for band in &mut self.bands {
            band.filter.reset();
        }
        self.envelopes = [0.0; NUM_BANDS];
    }
}

/// Linear 12-bit mapping of [0, 1] with round-half-up and saturation.
pub fn quantize(envelope: f64) -> u16 {
    let scaled = (envelope * f64::from(ADC_MAX) + 0.5).floor();
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else if scaled >= f64::from(ADC_MAX) {
        ADC_MAX
    } else {
        scaled as u16
    }
}
