//! The dual-contrast network.

mod config;
mod network;
mod triples;

use thiserror::Error;

use crate::tensor::TensorError;

pub use config::{parse_kv, Ablation, ChannelPlan, DcnetConfig, POOLED};
pub use network::{argmax_rows, rule_contrast, BnUpdates, Dcnet, Pass, CHOICES};
pub use triples::{batch_triples, form_triples, permute_choices, transpose_context, triple_indices, TRIPLES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    /// True when the failure is a NaN/Inf produced by the arithmetic.
    pub fn is_numerical(&self) -> bool {
        matches!(self, ModelError::Tensor(TensorError::NonFinite { .. }))
    }
}
