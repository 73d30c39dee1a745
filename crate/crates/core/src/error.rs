//! Error type shared by every module in the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the engine.
///
/// Variants are grouped by how a command-line caller should report them:
/// [`Error::Validation`] maps to exit code 1, everything else (I/O, file
/// format, data corruption) maps to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured-text document (manifest, volume header) failed to parse.
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    /// A binary file violated its format contract (bad magic, truncation,
    /// length mismatch).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Well-formed file carrying unusable values (NaN/Inf components).
    #[error("data error in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    /// Domain invariant or precondition violation.
    #[error("validation error: {0}")]
    Validation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn validation(reason: impl Into<String>) -> Self {
        Error::Validation(reason.into())
    }

    /// Process exit code for command-line front ends: 1 for validation
    /// errors, 2 for I/O, format, and data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            _ => 2,
        }
    }
}
