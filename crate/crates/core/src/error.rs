use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    /// The compiler could not be run or did not answer in time. Never
    /// conflated with "the program has errors".
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data corruption: {0}")]
    DataCorruption(String),

    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
