use std::path::PathBuf;

use thiserror::Error;

use crate::validate::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("missing required file {0}")]
    MissingFile(PathBuf),

    #[error("dataset failed validation ({} violation(s)): {}", .0.len(), first_violation(.0))]
    Invalid(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate linear system: {0}")]
    Singular(String),

    #[error("degenerate design: {0}")]
    Degenerate(String),

    #[error("unit {0} is not present in the graph")]
    UnitNotInGraph(u32),

    #[error("non-finite value at period {period}: {what}")]
    NonFinite { period: usize, what: String },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|v| v.to_string()).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::MissingFile(_)
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
