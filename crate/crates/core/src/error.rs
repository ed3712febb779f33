use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("energy {0} is outside (0, 1]")]
    InvalidEnergy(f64),
    #[error("singular values sum to zero")]
    DegenerateSpectrum,
    #[error("invalid rank {rank} for {context} (valid range 1..={max})")]
    InvalidRank { context: String, rank: usize, max: usize },
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("search space shape error: {0}")]
    SpaceShape(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("cached forward pass does not match the current parameters")]
    StaleCache,
    #[error("baseline error must be positive, got {0}")]
    InvalidBaseline(f64),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("no feasible point")]
    NoFeasiblePoint,
    #[error("full-set errors have zero variance across models")]
    DegenerateFullset,
    #[error("condensed set is empty (correl_min = {correl_min}, min_length = {min_length})")]
    EmptyCondensedSet { correl_min: f64, min_length: usize },
    #[error("invalid subset size {size} for {available} samples")]
    InvalidSize { size: usize, available: usize },
    #[error("toy profile build failed: {0}")]
    ProfileBuild(String),
    #[error("model shape error: {0}")]
    ModelShape(String),
    #[error("retraining diverged after {} epochs", history.len())]
    Divergence { history: Vec<f64> },
    #[error("external evaluator timed out after {0} s")]
    EvalTimeout(u64),
    #[error("evaluator protocol error: {0}")]
    Protocol(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// The innermost error, with all context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}
