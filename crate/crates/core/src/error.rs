use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, bad arguments, violated preconditions.
    Usage,
    /// Unreadable or malformed input data.
    Data,
    /// A model backend failed or answered with garbage.
    Backend,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("backend unreachable at {url}: {reason}")]
    BackendUnreachable { url: String, reason: String },

    #[error("malformed backend response: {0}")]
    MalformedBackendResponse(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("cluster probabilities have not been attached")]
    MissingClusterProbs,

    #[error("invalid thresholds: tau_low > tau_high ({tau_low} > {tau_high})")]
    InvalidThresholds { tau_low: f64, tau_high: f64 },

    #[error("invalid thresholds: {0}")]
    NegativeThreshold(String),

    #[error("no calibration records")]
    EmptyRecords,

    #[error("invalid calibration grid: {0}")]
    InvalidGrid(String),

    #[error("corpus not found: {}", .0.display())]
    CorpusNotFound(PathBuf),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate doc_id {doc_id:?} at line {line}")]
    DuplicateDocId { doc_id: String, line: usize },

    #[error("retrieval index has not been built")]
    IndexNotBuilt,

    #[error("index file is invalid: {0}")]
    InvalidIndex(String),

    #[error("no gold answers")]
    NoGoldAnswers,

    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("mock scenario: {0}")]
    Scenario(String),

    #[error("trace replay diverged: {0}")]
    ReplayMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            BackendUnreachable { .. } | MalformedBackendResponse(_) | ReplayMismatch(_) => {
                ErrorKind::Backend
            }
            InvalidRequest(_)
            | InvalidThresholds { .. }
            | NegativeThreshold(_)
            | InvalidGrid(_)
            | IndexNotBuilt
            | CorpusNotFound(_)
            | DatasetNotFound(_)
            | Config(_) => ErrorKind::Usage,
            EmptySampleSet
            | LengthMismatch { .. }
            | MissingClusterProbs
            | EmptyRecords
            | MalformedRecord { .. }
            | DuplicateDocId { .. }
            | InvalidIndex(_)
            | NoGoldAnswers
            | EmptyDataset
            | Scenario(_)
            | Io { .. } => ErrorKind::Data,
        }
    }
}
