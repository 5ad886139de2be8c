use thiserror::Error;

use crate::numgrad::Shape;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        found: Shape,
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("input node {node} is not bound")]
    UnboundInput { node: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("non-finite gradient at node {node}[{index}]")]
    NonFiniteGradient { node: usize, index: usize },
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("graph has no output node")]
    NoOutput,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocabulary { token: usize, vocab: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("burden must be nonnegative, got {0}")]
    NegativeBurden(f64),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFiniteLoss { component: &'static str, epoch: usize },
    #[error("degenerate regressor: all capability gaps are equal")]
    DegenerateRegressor,
    #[error("shrink {shrink} gives hidden size {hidden} for teacher size {teacher}; need at least 2")]
    ShrinkTooSmall {
        shrink: f64,
        teacher: usize,
        hidden: usize,
    },
    #[error("report has no seed records")]
    EmptyReport,
    #[error("model document: {0}")]
    Document(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by the supplied configuration rather than by
    /// a failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Toml(_) | Error::ShrinkTooSmall { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
