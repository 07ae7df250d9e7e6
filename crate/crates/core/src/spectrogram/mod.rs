//! Sliding window of band frames, z-score normalization and the spectrogram
//! record that gets classified, stored and annotated.

pub mod format;
pub mod index;
mod window;

pub use format::{
    decode_spectrogram, encode_spectrogram, file_name_for, load_spectrogram, rewrite_label, save_spectrogram,
    validate_id, FormatError,
};
pub use index::{read_index, write_index, write_index_with, IndexEntry, IndexError, Split, WriteStage, INDEX_FILE};
pub use window::{NotWarmedUp, SharedWindow, SlidingWindow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{ADC_MAX, NUM_BANDS, TICKS_PER_SECOND};

/// Window length in seconds.
pub const WINDOW_SECONDS: u32 = 3;
/// Rows of a spectrogram: 3 s of 5 ms ticks.
pub const WINDOW_TICKS: usize = (WINDOW_SECONDS * TICKS_PER_SECOND) as usize;
pub const CELLS: usize = WINDOW_TICKS * NUM_BANDS;
/// Below this standard deviation a window is treated as silence.
pub const DEGENERATE_STDDEV: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("matrix has {got} cells, expected {expected}")]
pub struct ShapeError {
    pub got: usize,
    pub expected: usize,
}

/// A 600×7 time-major matrix (row = tick, column = band).
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    data: Vec<f32>,
}

impl BandMatrix {
    pub const ROWS: usize = WINDOW_TICKS;
    pub const COLS: usize = NUM_BANDS;

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; CELLS],
        }
    }

    pub fn filled(value: f32) -> Self {
        Self {
            data: vec![value; CELLS],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self, ShapeError> {
        if data.len() != CELLS {
            return Err(ShapeError {
                got: data.len(),
                expected: CELLS,
            });
        }
        Ok(Self { data })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * Self::COLS + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * Self::COLS..(row + 1) * Self::COLS]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(Self::COLS)
    }

    /// Dequantizes one ADC reading to [0, 1].
    pub fn dequantize(amplitude: u16) -> f32 {
        f32::from(amplitude) / f32::from(ADC_MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Unlabeled,
    Drumming,
    Other,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Unlabeled => 0,
            Label::Drumming => 1,
            Label::Other => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Unlabeled),
            1 => Some(Label::Drumming),
            2 => Some(Label::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Unlabeled => "unlabeled",
            Label::Drumming => "drumming",
            Label::Other => "other",
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unlabeled" => Ok(Label::Unlabeled),
            "drumming" => Ok(Label::Drumming),
            "other" => Ok(Label::Other),
            _ => Err(format!("unknown label {s:?} (expected drumming, other or unlabeled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpectrogramMeta {
    pub id: String,
    /// File name or `synth:<kind>`.
    pub source: String,
    /// RFC 3339 timestamp.
    pub captured_at: String,
    pub label: Label,
    pub species_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: BandMatrix,
    pub meta: SpectrogramMeta,
}

/// Normalization statistics scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZScoreScope {
    /// One mean/stddev over all 4200 cells.
    #[default]
    Window,
    /// Separate statistics per band column.
    PerBand,
}

/// Whole-window z-score with population stddev.
pub fn zscore(raw: &BandMatrix) -> Spectrogram {
    zscore_with(raw, ZScoreScope::Window)
}

pub fn zscore_with(raw: &BandMatrix, scope: ZScoreScope) -> Spectrogram {
    let mut out = BandMatrix::zeros();
    match scope {
        ZScoreScope::Window => normalize_cells(raw.as_slice(), out.as_mut_slice(), 0, 1),
        ZScoreScope::PerBand => {
            for col in 0..BandMatrix::COLS {
                normalize_cells(raw.as_slice(), out.as_mut_slice(), col, BandMatrix::COLS);
            }
        }
    }
    Spectrogram {
        values: out,
        meta: SpectrogramMeta::default(),
    }
}

fn normalize_cells(src: &[f32], dst: &mut [f32], offset: usize, stride: usize) {
    let cells = || src.iter().skip(offset).step_by(stride).map(|&v| f64::from(v));
    let n = cells().count() as f64;
    let mean = cells().sum::<f64>() / n;
    let var = cells().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let out = dst.iter_mut().skip(offset).step_by(stride);
    if std < DEGENERATE_STDDEV || !std.is_finite() {
        out.for_each(|d| *d = 0.0);
    } else {
        for (d, v) in out.zip(cells()) {
            *d = ((v - mean) / std) as f32;
        }
    }
}
