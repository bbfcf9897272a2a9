use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"VTFB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated tensor file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid tensor header: {0}")]
    InvalidHeader(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::Truncated { .. }
            | Error::InvalidHeader(_) => "format",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::Manifest(_) => "manifest",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "numeric",
        }
    }
}
