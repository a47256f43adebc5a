use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LseError> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: flags, files, or data that violate a documented contract.
    Validation,
    /// Something failed while doing the work (I/O, numerics).
    Runtime,
}

#[derive(Debug, Error)]
pub enum LseError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}: malformed file: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerically singular system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

impl LseError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LseError::Invalid(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        LseError::Dimension(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        LseError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LseError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            LseError::Invalid(_) | LseError::Dimension(_) | LseError::Format { .. } => {
                ErrorClass::Validation
            }
            // a path that does not exist is a bad argument, not a failure
            LseError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorClass::Validation,
            LseError::Io { .. } | LseError::Singular { .. } | LseError::NoConvergence { .. } => {
                ErrorClass::Runtime
            }
        }
    }
}
