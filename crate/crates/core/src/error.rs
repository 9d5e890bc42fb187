use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix not positive definite even with diagonal jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("mode search did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("file {path} has format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("checkpoint config mismatch: file has {stored}, expected {expected}")]
    ConfigMismatch { stored: String, expected: String },
    #[error("stale activation tape: recorded at parameter generation {tape}, parameters are at {params}")]
    StaleTape { tape: u64, params: u64 },
    #[error("empty split: {0}")]
    EmptySplit(String),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Decode { .. }
            | Error::UnsupportedFormat { .. }
            | Error::Corrupt { .. }
            | Error::VersionMismatch { .. }
            | Error::ConfigMismatch { .. } => ErrorKind::Io,
            Error::Factorization { .. } | Error::NonConvergence { .. } => ErrorKind::Numerical,
            Error::InvalidArgument(_)
            | Error::Shape(_)
            | Error::StaleTape { .. }
            | Error::EmptySplit(_) => ErrorKind::Usage,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
