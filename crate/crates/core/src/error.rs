use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("invalid prompt bank: {0}")]
    InvalidBank(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Network or server failure that may succeed on a later attempt.
    #[error("transport error for {target}: {message}")]
    Transport { target: String, message: String },

    /// Credentials rejected or quota exhausted; retrying will not help.
    #[error("authorization or quota failure for {target}: {message}")]
    Auth { target: String, message: String },

    /// Offline mode forbids the request and the cache has no answer for it.
    #[error("offline cache miss in namespace {namespace}: {detail}")]
    OfflineMiss { namespace: String, detail: String },

    #[error("every fetch failed for {question:?}: {}", format_causes(.causes))]
    AllFetchesFailed {
        question: String,
        causes: Vec<(String, String)>,
    },

    #[error("prompt does not fit in {budget} tokens even with no evidence and no examples")]
    ContextOverflow { budget: usize },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("label {label:?} is not in the label set {label_set:?}")]
    UnknownLabel { label: String, label_set: Vec<String> },

    #[error("missing cached data for question ids: {}", .0.join(", "))]
    MissingData(Vec<String>),

    /// Too many questions failed in a stage for its output to be trusted.
    #[error("{stage}: {failed} of {total} questions failed")]
    PartialFailure {
        stage: String,
        failed: usize,
        total: usize,
    },

    #[error("prediction ids do not match the dataset: {0}")]
    IdMismatch(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

fn format_causes(causes: &[(String, String)]) -> String {
    causes
        .iter()
        .map(|(url, cause)| format!("{url}: {cause}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
