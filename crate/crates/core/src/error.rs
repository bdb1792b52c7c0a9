//! Engine-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dimension mismatch in {op}: {details}")]
    DimensionMismatch { op: &'static str, details: String },

    #[error("derivative basis mismatch in {0}")]
    BasisMismatch(&'static str),

    #[error("multi-index order {got} exceeds the engine limit {limit}")]
    OrderLimit { got: usize, limit: usize },

    #[error("non-finite value detected in {place} (epoch {epoch}, layer {layer})")]
    Divergence {
        place: &'static str,
        layer: usize,
        epoch: u64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing input derivative rule for index {0}")]
    MissingInputRule(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
