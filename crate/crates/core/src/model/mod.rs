//! GPT-2 style decoder-only transformer with pre-layer-norm blocks, learned
//! absolute positions and two I/O formulations: per-axis token classification
//! and continuous-state regression.
//!
//! One sequence position is one time step. For classification the per-axis
//! token embeddings are summed into that position and one logit head per axis
//! predicts the next step's tokens.

mod checkpoint;
mod config;
mod forward;
mod weights;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Provenance, CHECKPOINT_MAGIC};
pub use config::{HeadKind, ModelConfig, MLP_EXPANSION};
pub use forward::{
    build_graph, forward_classification, forward_regression, forward_with_trace, ActivationTrace, Graph, Input,
    ModelOutput, Site, SiteKind,
};
pub use weights::Weights;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("weights do not match config: {0}")]
    WeightsMismatch(String),
    #[error("sequence length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token {token} out of range for vocabulary {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("input does not fit the model: {0}")]
    InputShape(String),
    #[error("non-finite input state")]
    NonFiniteInput,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io: {0}")]
    Io(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}
