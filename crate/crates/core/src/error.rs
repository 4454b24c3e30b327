use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unreadable input: {0}")]
    Unreadable(String),
    #[error("missing mandatory column: {0}")]
    MissingColumn(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("checkpoint/vocab mismatch: checkpoint expects vocab {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("checkpoint/graph mismatch: checkpoint expects graph {expected}, found {found}")]
    GraphMismatch { expected: String, found: String },
    #[error("unknown item keys: {}", .0.join(", "))]
    UnknownItems(Vec<String>),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by a broken internal invariant rather than
    /// by the caller's input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
