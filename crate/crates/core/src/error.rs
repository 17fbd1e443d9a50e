use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
