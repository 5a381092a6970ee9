use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("all-zero mass")]
    AllZeroMass,

    #[error("conditioning on null event")]
    NullEvent,

    #[error("zero-probability sequence")]
    ZeroProbability,

    #[error("token id {id} out of range (vocabulary size {vocab})")]
    TokenOutOfRange { id: u64, vocab: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("zero-variance {0}")]
    ZeroVariance(&'static str),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
