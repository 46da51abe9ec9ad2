use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::codec::TokenCodec;

/// Output formulation of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// One token per coordinate axis in, one softmax over `vocab` per axis out.
    Classification { vocab: usize, half_range: f64 },
    /// Continuous state in, continuous next state out.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    /// Maximum number of positions the model attends to.
    pub context_len: usize,
    pub head: HeadKind,
    /// 1 for sine, 2 for Kepler.
    pub input_dim: usize,
    /// Share each axis's token embedding with its output projection.
    #[serde(default = "default_tie")]
    pub tie_embeddings: bool,
}

fn default_tie() -> bool {
    true
}

pub const MLP_EXPANSION: usize = 4;

impl ModelConfig {
    pub fn classification(input_dim: usize, vocab: usize, half_range: f64, d_model: usize, context_len: usize) -> Self {
        ModelConfig {
            n_layer: 2,
            n_head: 1,
            d_model,
            context_len,
            head: HeadKind::Classification { vocab, half_range },
            input_dim,
            tie_embeddings: true,
        }
    }

    pub fn regression(input_dim: usize, d_model: usize, context_len: usize) -> Self {
        ModelConfig {
            n_layer: 2,
            n_head: 1,
            d_model,
            context_len,
            head: HeadKind::Regression,
            input_dim,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_layer == 0 || self.n_head == 0 || self.d_model == 0 {
            return bad("n_layer, n_head and d_model must be positive".into());
        }
        if self.d_model % self.n_head != 0 {
            return bad(format!("d_model {} not divisible by n_head {}", self.d_model, self.n_head));
        }
        if self.context_len < 2 {
            return bad(format!("context length must be at least 2, got {}", self.context_len));
        }
        if !(1..=2).contains(&self.input_dim) {
            return bad(format!("input_dim must be 1 or 2, got {}", self.input_dim));
        }
        if let HeadKind::Classification { vocab, half_range } = self.head {
            TokenCodec::new(half_range, vocab).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn mlp_width(&self) -> usize {
        MLP_EXPANSION * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    pub fn codec(&self) -> Option<TokenCodec> {
        match self.head {
            HeadKind::Classification { vocab, half_range } => TokenCodec::new(half_range, vocab).ok(),
            HeadKind::Regression => None,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.head, HeadKind::Classification { .. })
    }
}
