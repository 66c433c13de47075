//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by grid operations, solvers and training.
#[derive(Debug, Error)]
pub enum FnsError {
    #[error("shape mismatch: expected n = {expected}, found n = {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stencil center coefficient is zero")]
    ZeroCenter,

    #[error("iteration diverged at step {step} (relative residual {residual:e})")]
    Diverged { step: usize, residual: f64 },

    #[error("non-finite value in sample {sample}")]
    NonFinite { sample: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("solver breakdown: {0}")]
    Breakdown(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FnsError>;

pub(crate) fn ensure_same_n(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(FnsError::ShapeMismatch { expected, found })
    }
}
