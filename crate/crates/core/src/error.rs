use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("multibuffer not ready for a batch of {batch_size}")]
    NotReady { batch_size: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid value for `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
