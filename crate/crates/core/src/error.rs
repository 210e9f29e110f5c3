use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    /// An argument or configuration value is out of its allowed domain.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Input too short for the requested filtering.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An API was called in a way it does not support (e.g. backward from a non-scalar).
    #[error("usage: {0}")]
    Usage(String),

    /// Malformed binary or text file.
    #[error("{path}: format error at offset {offset}: {msg}")]
    Format { path: String, offset: usize, msg: String },

    /// A gradient contained NaN or infinity.
    #[error("non-finite gradient in parameter `{param}`")]
    NonFinite { param: String },

    /// Training produced a NaN loss.
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Validation(_)
                | Error::Degenerate(_)
                | Error::Usage(_)
                | Error::Format { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
