//! Crate-wide error type.

use thiserror::Error;

/// Coarse classification used by the CLI to pick a stable exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or invalid arguments (exit code 2).
    Config,
    /// Malformed or inconsistent input data (exit code 3).
    Data,
    /// Numeric failure at runtime: NaN loss, degenerate cell (exit code 4).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid crystal: {0}")]
    InvalidCrystal(String),

    #[error("invalid lattice parameters: {0}")]
    InvalidLatticeParams(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported CIF feature: {0}")]
    UnsupportedCif(String),

    #[error("prompt parse error: {0}")]
    Prompt(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("zero-probability conditioning pair: a0={a0}, a_t={a_t}, t={t}")]
    ZeroProbability { a0: usize, a_t: usize, t: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidLatticeParams(_) => ErrorClass::Config,
            Error::InvalidCrystal(_)
            | Error::Parse { .. }
            | Error::UnsupportedCif(_)
            | Error::Prompt(_)
            | Error::Embedding(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => ErrorClass::Data,
            Error::NonFinite(_) | Error::Numeric(_) | Error::ZeroProbability { .. } => {
                ErrorClass::Numeric
            }
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
