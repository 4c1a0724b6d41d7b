use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op} needs at least one input")]
    Empty { op: &'static str },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
