use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] gridfuzz_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("{path}:{line}: malformed record")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("determinism violation in {record}: {detail}")]
    Determinism { record: String, detail: String },
    #[error("csv")]
    Csv(#[from] csv::Error),
    #[error("json")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
