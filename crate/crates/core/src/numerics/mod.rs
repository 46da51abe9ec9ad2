//! Dense tensors, reverse-mode differentiation, Adam, and a finite-difference
//! gradient oracle.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {op} during {stage} pass")]
    NonFinite { op: &'static str, stage: &'static str },
    #[error("index {index} out of range for bound {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("loss is not finite at perturbed parameter {param}[{coord}]")]
    NonFiniteLoss { param: usize, coord: usize },
}
