//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by configuration, shape validation, misuse of the
/// recording engine, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad grid sizes, even kernel support, channel
    /// mismatches, unknown config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: backward on a foreign tensor, optimizer step without
    /// gradients.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed on-disk data: checkpoints, manifests, PGM files, configs.
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure, carrying the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
