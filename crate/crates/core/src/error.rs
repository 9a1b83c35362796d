use std::path::PathBuf;

use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VganError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint config hash {found:016x} does not match {expected:016x}")]
    HashMismatch { found: u64, expected: u64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("metric failed: {0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, VganError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(VganError::Invalid(msg.into()))
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> VganError {
    let path = path.into();
    move |source| VganError::Io { path, source }
}
