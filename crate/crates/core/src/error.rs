use thiserror::Error;

/// Errors raised across the suite.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, hyperparameter, preset or config key.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (shape, index, stale cache).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numerical routine diverged or a linear system was singular.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A log or CSV did not have the expected columns.
    #[error("schema error: {0}")]
    Schema(String),
    /// An empirically checked property did not hold.
    #[error("property violation: {0}")]
    Property(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
