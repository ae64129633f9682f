use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid network, training or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Mismatched vector or matrix dimensions.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A non-finite value reached an operation that requires finite input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid argument to an operation (empty set, zero budget, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Index outside the dataset or pool.
    #[error("index {index} out of range for length {len}")]
    Range { index: usize, len: usize },

    /// Malformed input file.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A required artifact (snapshot, pool file) is missing from a run directory.
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
