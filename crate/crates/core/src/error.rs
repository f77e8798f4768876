//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("audio too short: {0}")]
    TooShort(String),

    #[error("lattice too large to enumerate: {0}")]
    TooLarge(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("undefined baseline: {0}")]
    UndefinedBaseline(String),

    #[error("checkpoint version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("wav error: {0}")]
    Wav(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
