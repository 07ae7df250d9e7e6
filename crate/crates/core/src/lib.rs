//! Woodpecker drumming detection: a simulated seven-band analyzer front end,
//! 3 s sliding-window spectrograms, a small CNN classifier trained from
//! scratch, synthetic dataset tooling, a real-time detector and a labeling
//! service.

pub mod analyzer;
pub mod annotation;
pub mod cnn;
pub mod dataset;
pub mod metrics;
pub mod runtime;
pub mod spectrogram;

pub use analyzer::{analyze_clip, AnalyzerConfig, AudioClip, BandFrame, FilterBank};
pub use cnn::{build_reference_model, Model, Prediction, TensorF, TrainConfig, TrainHistory};
pub use spectrogram::{zscore, BandMatrix, Label, SlidingWindow, Spectrogram, SpectrogramMeta};
pub use runtime::{run_detector, DetectionEvent, DetectorConfig, EventKind, TimingReport};
