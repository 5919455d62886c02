use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed us something malformed: bad dimensions, out-of-range
    /// parameters, invalid schedules, unparseable files.
    #[error("input error: {0}")]
    Input(String),

    /// A solver failed to meet its own tolerance contract. These indicate a
    /// bug or a pathological instance, not bad user input.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
