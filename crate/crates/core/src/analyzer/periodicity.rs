//! Autocorrelation of band-frame series, used to check that strike trains
//! survive the analyzer at the expected tick period.

use super::BandFrame;

/// Band-summed amplitude per tick.
pub fn band_energy(frames: &[BandFrame]) -> Vec<f64> {
    frames.iter().map(|f| f64::from(f.sum())).collect()
}

/// Biased autocorrelation of the mean-removed series, normalized so lag 0 is
/// 1. A constant series yields all zeros.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let energy: f64 = centered.iter().map(|x| x * x).sum();
    let max_lag = max_lag.min(n - 1);
    if energy <= f64::EPSILON * n as f64 {
        return vec![0.0; max_lag + 1];
    }
    (0..=max_lag)
        .map(|lag| {
            centered[..n - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / energy
        })
        .collect()
}

/// A local maximum of the autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcfPeak {
    pub lag: usize,
    pub height: f64,
}

/// Local maxima of `acf` with lag in `[min_lag, max_lag]`.
pub fn local_peaks(acf: &[f64], min_lag: usize, max_lag: usize) -> Vec<AcfPeak> {
    let hi = max_lag.min(acf.len().saturating_sub(2));
    (min_lag.max(1)..=hi)
        .filter(|&k| acf[k] > acf[k - 1] && acf[k] >= acf[k + 1])
        .map(|lag| AcfPeak {
            lag,
            height: acf[lag],
        })
        .collect()
}

/// The tallest local maximum in `[min_lag, max_lag]`.
pub fn dominant_peak(acf: &[f64], min_lag: usize, max_lag: usize) -> Option<AcfPeak> {
    local_peaks(acf, min_lag, max_lag)
        .into_iter()
        .max_by(|a, b| a.height.total_cmp(&b.height))
}

/// Dominant strike period of a frame sequence in ticks.
pub fn dominant_period(frames: &[BandFrame], min_lag: usize, max_lag: usize) -> Option<AcfPeak> {
    let acf = autocorrelation(&band_energy(frames), max_lag + 1);
    dominant_peak(&acf, min_lag, max_lag)
}
