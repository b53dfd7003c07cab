use thiserror::Error;

use crate::formula::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Syntax(#[from] ParseError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown modality `{0}` (not present in the SDE library)")]
    UnknownModality(String),

    #[error("unknown atom `{0}`")]
    UnknownAtom(String),

    #[error("integration diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("non-finite value in {context}")]
    Numeric { context: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by the
    /// inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Numeric { .. })
    }
}
