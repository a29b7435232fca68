use std::io;

use thiserror::Error;

/// Errors produced anywhere in the refinement pipeline.
#[derive(Debug, Error)]
pub enum CclError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CclError>,
    },
}

pub type Result<T> = std::result::Result<T, CclError>;

impl CclError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CclError::InvalidInput(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        CclError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
