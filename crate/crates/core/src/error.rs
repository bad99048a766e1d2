use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("element {element} is degenerate (signed volume {volume:e})")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("element {element} is inverted (det F = {det:e})")]
    InvertedElement { element: usize, det: f64 },

    #[error("{method} did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("failed to parse {file}: {message}")]
    Parse { file: PathBuf, message: String },

    #[error("{stage} failed in outer iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(self, stage: &'static str, iteration: usize) -> Self {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }
}
