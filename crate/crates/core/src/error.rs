use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line} is not valid UTF-8")]
    Utf8 { path: PathBuf, line: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("precondition: {0}")]
    Precondition(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    Range { id: u32, vocab_size: usize },

    #[error("scoring: {0}")]
    Scoring(String),

    #[error("format: {message} (at byte offset {offset})")]
    Format { message: String, offset: u64 },

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("checkpoint manifest: {0}")]
    Manifest(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(message: impl Into<String>, offset: u64) -> Self {
        Error::Format {
            message: message.into(),
            offset,
        }
    }

    /// Short machine-parsable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Utf8 { .. } => "input",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::Range { .. } => "range",
            Error::Scoring(_) => "scoring",
            Error::Format { .. } => "format",
            Error::Integrity(_) => "integrity",
            Error::Manifest(_) => "manifest",
            Error::Numeric(_) => "numeric",
            Error::Serde(_) => "serialization",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
