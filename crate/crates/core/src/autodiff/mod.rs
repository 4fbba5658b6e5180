//! Minimal reverse-mode automatic differentiation over dense f64 arrays,
//! covering exactly the primitives the logical operators and the training
//! loss need.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, CoordCheck, GradCheckReport};
pub use tape::{Axis, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropoutRate(f64),
}
