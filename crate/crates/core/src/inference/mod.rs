//! Forward pass of a small 1-D CNN over 10 s ECG segments.
//!
//! Layers compute in `f32`; the final softmax and the class probabilities
//! are `f64`. Integer amplitudes are divided by [`AMPLITUDE_SCALE`] before
//! the first layer.

mod model;
mod stream;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    default_model, default_spec, LayerSpec, Model, ModelSpec, Shape, DEFAULT_CONV_FILTERS, DEFAULT_DENSE,
    DEFAULT_KERNEL, DEFAULT_LEAK,
};
pub use stream::{classify_stream, segment_stream, InferenceLogEntry, Segment, Segmenter};
pub use tensor::{conv1d, dense, leaky_relu, max_pool1d, softmax, Tensor1d};

/// 10 s at 256 Hz.
pub const SEGMENT_LEN: usize = 2560;
/// Input normalization divisor (2^15).
pub const AMPLITUDE_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("shape error: {message}")]
pub struct ShapeError {
    pub message: String,
}

impl ShapeError {
    pub(crate) fn new(message: String) -> Self {
        Self { message }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs {
    pub p_mi: f64,
    pub p_normal: f64,
}

impl ClassProbs {
    pub fn is_mi(&self) -> bool {
        self.p_mi > self.p_normal
    }
}
