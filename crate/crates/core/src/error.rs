use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("sampling budget exhausted after accepting {accepted} of {requested} tiles")]
    BudgetExhausted { accepted: usize, requested: usize },

    #[error("blocked domain: no fluid path connects inflow to outflow")]
    BlockedDomain,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },

    #[error(transparent)]
    Autodiff(#[from] urbanwind_autodiff::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category name used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::Format(_) => "format",
            Error::Integrity(_) => "integrity",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::BlockedDomain => "blocked_domain",
            Error::Shape(_) => "shape",
            Error::Training(_) => "training",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::Autodiff(_) => "autodiff",
        }
    }
}
