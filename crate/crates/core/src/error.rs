//! Crate-wide error type.
//!
//! Shape mismatches inside the differentiable-math layer are programming
//! errors and panic with the offending operation and shapes (the same
//! convention `ndarray` and `nalgebra` follow).  Everything that can fail
//! because of *data* — factorizations, file parsing, configuration,
//! optimization divergence — goes through [`Error`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A symmetric matrix could not be factorized even after jitter
    /// escalation (start at 1e-8 x mean diagonal, doubled up to 14 times).
    #[error("cholesky factorization of {name} failed: not positive definite after {attempts} jitter attempts (last jitter {last_jitter:.3e})")]
    Factorization {
        name: String,
        attempts: usize,
        last_jitter: f64,
    },

    /// A function was called with an argument outside its domain.
    #[error("invalid argument to {op}: {reason}")]
    Argument { op: String, reason: String },

    /// The requested operation does not apply to this configuration
    /// (e.g. a Lipschitz envelope for a non-residual embedder).
    #[error("{op} is not applicable: {reason}")]
    NotApplicable { op: String, reason: String },

    /// The training objective became non-finite.
    #[error("training diverged at step {step} (epoch {epoch}): objective is {value}; parameter norm {param_norm:.6e}")]
    Diverged {
        step: usize,
        epoch: usize,
        value: f64,
        param_norm: f64,
    },

    /// A data file failed validation.
    #[error("{file}:{line}: {reason}")]
    DataValidation {
        file: String,
        line: usize,
        reason: String,
    },

    /// A configuration file contained an unknown or ill-typed key.
    #[error("configuration error: {0}")]
    Config(String),

    /// A requested split cannot be realized on the given dataset.
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    /// A checkpoint failed structural validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn argument(op: &str, reason: impl Into<String>) -> Self {
        Error::Argument {
            op: op.to_string(),
            reason: reason.into(),
        }
    }
}
