use thiserror::Error;

use crate::rd_estimator::RdPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("batch size mismatch: {left} vs {right}")]
    BatchMismatch { left: usize, right: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("langevin chain {chain} diverged at step {step} (|y| > {threshold:e})")]
    Divergence {
        chain: usize,
        step: usize,
        threshold: f64,
    },

    #[error("non-finite parameter gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("Blahut-Arimoto did not converge within {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        last: Box<RdPoint>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
