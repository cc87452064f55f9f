use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("treatment vector has no attributes")]
    EmptyTreatment,

    #[error("invalid treatment vector: {0}")]
    InvalidTreatment(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate message id `{0}`")]
    DuplicateMessage(String),

    #[error("event at {event_at} lies after the evaluation time {at_time}")]
    FutureEvent { event_at: i64, at_time: i64 },

    #[error("message `{0}` is not in the message log")]
    UnknownMessage(String),

    #[error("ledger contains no matched messages")]
    EmptyLedger,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no ground truth recorded for stratum `{0}`")]
    UnknownStratum(String),

    #[error(
        "`{0}` cannot be scored against a synthetic control: control contacts are never \
         actually sent a message, so they have nothing to click or open"
    )]
    ClickThroughUnsupported(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
