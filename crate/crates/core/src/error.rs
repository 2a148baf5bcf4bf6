use thiserror::Error;

use crate::autodiff::{CheckpointError, TensorError};
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input field `{field}`: {reason}")]
    Input { field: &'static str, reason: String },
    #[error("input of {pieces} pieces exceeds the maximum of {max}; truncation is not performed")]
    TooLong { pieces: usize, max: usize },
    #[error("label space mismatch: {0}")]
    LabelSpace(String),
    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Diverged {
        epoch: usize,
        step: usize,
        message: String,
    },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
