//! Minimal tensor and CNN engine: the layer kernels, a sequential model with
//! reverse-mode gradients, Adam training and the WPNN weight format.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training/inference and in `f64` for finite-difference checks.

mod loss;
mod model;
pub mod ops;
mod real;
mod tensor;
mod train;
mod weights;

pub use loss::{softmax, softmax_cross_entropy};
pub use model::{
    build_reference_model, build_reference_model_with_dropout, Activation, DropoutMasks, Gradients,
    LayerSpec, Model, ModelSpec, Params, Prediction, Trace, CLASS_DRUMMING, CLASS_OTHER,
    spectrogram_tensor, REFERENCE_INPUT_SHAPE, REFERENCE_PARAM_COUNTS, REFERENCE_TOTAL_PARAMS,
};
pub use real::Real;
pub use tensor::{Tensor, TensorF};
pub use train::{
    batch_gradients, split_stratified, train, train_with_split, Adam, BatchResult, EpochStats,
    Sample, TrainConfig, TrainHistory,
};
pub use weights::{load_weights, load_weights_for, save_weights, weights_from_bytes, weights_to_bytes};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training setup: {0}")]
    Training(String),
    #[error("bad magic: expected WPNN")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated weight file: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid layer header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> CnnError {
    CnnError::Shape(msg.into())
}
