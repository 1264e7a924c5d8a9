//! Small differentiable core: sequential nets built from dense, conv1d,
//! activation and softmax layers, flat parameter vectors, and optimizers.
//!
//! Everything is `f64`. A net processes one sample at a time; batching is
//! done by the caller accumulating gradients across samples.

mod gradcheck;
mod layer;
mod net;
mod optim;
mod params;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport};
pub(crate) use layer::sigmoid;
pub use layer::{Activation, LayerSpec};
pub use net::{Gradients, Net, Tape};
pub use optim::{sgd_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{LayoutEntry, ParamVector};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: expected input of length {expected}, got {got}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("upstream gradient has length {got}, net output has length {expected}")]
    UpstreamMismatch { expected: usize, got: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("invalid layer {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),
    #[error("parameter decoding failed: {0}")]
    Decode(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
