use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("line {line}: product {product_id} is missing mandatory attribute `{key}`")]
    MissingAttribute {
        line: usize,
        product_id: u32,
        key: String,
    },

    #[error("duplicate product id {0}")]
    DuplicateProduct(u32),

    #[error("invalid session {session_id}: {message}")]
    InvalidSession { session_id: u64, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("solver did not converge after {iterations} iterations (max KKT violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("no valid training pairs: {0}")]
    NoValidPairs(String),

    #[error("feature mask mismatch: model trained with {model}, features built with {features}")]
    MaskMismatch { model: String, features: String },

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
