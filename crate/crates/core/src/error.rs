//! Error type shared across the crate.
//!
//! Variants map onto the CLI's exit codes: [`Error::Config`] and [`Error::Usage`]
//! are caller mistakes (exit 1), [`Error::Data`] and [`Error::Io`] mean the world
//! disagreed with us (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter or configuration value (bad λ, δ out of range, unknown config key, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The API was called in a way that cannot be satisfied (dimension mismatch, empty arm set, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A data file exists but its contents are malformed or inconsistent.
    #[error("data error: {path}:{line}: {msg}")]
    Data {
        path: String,
        /// 1-based line number; 0 when the problem is not tied to a specific line.
        line: usize,
        msg: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// CLI exit status for this error: 1 for caller mistakes, 2 for data/I-O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Data { .. } | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
