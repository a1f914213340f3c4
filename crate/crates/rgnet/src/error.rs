//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RgError {
    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("degenerate annotation: {0}")]
    DegenerateAnnotation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value in {0}")]
    NumericInput(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: String, expected: String },

    #[error("version mismatch in {path}: found {found}, supported {supported}")]
    VersionMismatch {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dangling reference: {0}")]
    DanglingReference(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("degenerate proposal: {0}")]
    DegenerateProposal(String),

    #[error("checkpoint load error: {0}")]
    CheckpointLoad(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RgError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RgError::Io {
            path: path.into(),
            source,
        }
    }
}
