//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes do not chain or match the expected layout.
    #[error("dimension error in {context}: {details}")]
    Dimension { context: String, details: String },

    /// Malformed input data (trajectory files, manifests).
    #[error("parse error at {path}:{line}: {details}")]
    Parse {
        path: String,
        line: usize,
        details: String,
    },

    /// Structurally valid input that violates a data invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Bad configuration value or unknown name.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values or other numerical failures.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// API misuse (e.g. backward from a node not on the tape).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(context: impl Into<String>, details: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
