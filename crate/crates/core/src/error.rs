use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid split: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding backend returned status {status}: {body}")]
    HttpBackendError { status: u16, body: String },

    #[error("dataset has items without categories (first at index {0})")]
    MissingCategories(usize),

    #[error("found {found} distinct categories but {expected} partitions were requested")]
    CategoryCountMismatch { expected: usize, found: usize },

    #[error("pool of {size} items exceeds the dense spectral solver cap of {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("generation backend unavailable (status {status}): {body}")]
    BackendUnavailable { status: u16, body: String },

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("prompt does not follow the generation template: {0}")]
    UnparsablePrompt(String),

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },

    #[error("candidate pool incomplete: got {got} of {expected}")]
    PartialPool { expected: usize, got: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "file_not_found",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::HttpBackendError { .. } => "http_backend_error",
            Error::MissingCategories(_) => "missing_categories",
            Error::CategoryCountMismatch { .. } => "category_count_mismatch",
            Error::TooLarge { .. } => "too_large",
            Error::UnknownId(_) => "unknown_id",
            Error::BackendUnavailable { .. } => "backend_unavailable",
            Error::Timeout(_) => "timeout",
            Error::UnparsablePrompt(_) => "unparsable_prompt",
            Error::BufferTooSmall { .. } => "buffer_too_small",
            Error::PartialPool { .. } => "partial_pool",
            Error::Checkpoint(_) => "checkpoint",
            Error::Invariant(_) => "invariant",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Errors caused by the caller's inputs or settings rather than by a
    /// failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::FileNotFound(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::MissingCategories(_)
                | Error::CategoryCountMismatch { .. }
                | Error::TooLarge { .. }
        )
    }
}
