use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the string names the offending field.
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// An operation was invoked on a component in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inference memory has no record for route {0}")]
    MemoryMiss(u64),

    #[error("scheduling error: {0}")]
    Schedule(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => 3,
            Error::State(_) | Error::MemoryMiss(_) | Error::Schedule(_) => 4,
            Error::Consistency(_) | Error::Domain(_) => 3,
            Error::Io(_) => 3,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
