use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that must agree do not.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition on an argument was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation was invoked in the wrong state (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// Non-finite values or a failed factorisation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
