//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph ingestion, spectral decomposition, the
/// spherical transform, mixture fitting and model selection.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("self-loop on node {node} is not allowed in an undirected graph")]
    SelfLoop { node: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge ({iterations} iterations)")]
    NoConvergence { iterations: usize },

    #[error("undefined angle ({context}): first two coordinates are both zero")]
    UndefinedAngle { context: String },

    #[error("singular gradient: |x2| equals the vector norm")]
    SingularGradient,

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("second-moment matrix is numerically singular (condition number {condition:.3e})")]
    SingularMoment { condition: f64 },

    #[error("mixture component {component} collapsed twice during EM")]
    ComponentCollapse { component: usize },

    #[error("non-finite log-likelihood at EM iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
