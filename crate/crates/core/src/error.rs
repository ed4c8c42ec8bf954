use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("node index {index} out of range (limit {limit})")]
    NodeOutOfRange { index: usize, limit: usize },

    #[error("event at t={event_time} is older than node {node}'s last update at t={last_update}")]
    OutOfOrder {
        node: usize,
        event_time: f64,
        last_update: f64,
    },

    #[error("identity aggregator needs exactly one message, got {0}")]
    IdentityAggregator(usize),

    #[error("inconsistent formulation: {0}")]
    Formulation(String),

    #[error("formulation is not TGN-shaped: {0}")]
    NotTgnShaped(String),

    #[error("node-event messages are not supported")]
    NodeEventsUnsupported,

    #[error("non-finite loss at epoch {epoch}, window starting t={window_start}")]
    NonFiniteLoss { epoch: usize, window_start: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
