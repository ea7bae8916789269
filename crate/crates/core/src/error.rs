use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("universe mismatch: expected {expected}, found {found}")]
    UniverseMismatch { expected: String, found: String },

    #[error("invalid universe: {0}")]
    InvalidUniverse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate test id `{0}`")]
    DuplicateId(String),

    #[error("unknown test id `{0}`")]
    UnknownId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("instance too large for exhaustive search: C({n}, {k}) = {combinations} exceeds the bound {bound}")]
    InstanceTooLarge {
        n: usize,
        k: usize,
        combinations: u128,
        bound: u64,
    },

    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("a reward group needs at least 2 samples, got {0}")]
    GroupTooSmall(usize),

    #[error("line numbers out of range 1..={line_count}: {lines:?}")]
    LineOutOfRange { lines: Vec<usize>, line_count: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("transition {position} failed: {source}")]
    Replay {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task `{task_id}`: {source}")]
    Task {
        task_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("endpoint unreachable: {0}")]
    Unreachable(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn for_task(task_id: &str, source: Error) -> Self {
        Error::Task {
            task_id: task_id.to_owned(),
            source: Box::new(source),
        }
    }
}
