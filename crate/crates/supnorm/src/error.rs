use std::path::PathBuf;

/// Errors from files, configs and experiment runs. Core failures keep their
/// own codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] supnorm_core::Error),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse-error: {what} at line {line}, column {column}: {message}")]
    Parse { what: String, line: usize, column: usize, message: String },
    #[error("bad-version: expected version {expected}, found {found}")]
    BadVersion { expected: u64, found: u64 },
    #[error("bad-config: {field}: {message}")]
    BadConfig { field: String, message: String },
    #[error("empty-report: {0}")]
    EmptyReport(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Core(e) => e.code(),
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse-error",
            Error::BadVersion { .. } => "bad-version",
            Error::BadConfig { .. } => "bad-config",
            Error::EmptyReport(_) => "empty-report",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(what: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Parse { what: what.into(), line: err.line(), column: err.column(), message: err.to_string() }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::BadConfig { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
