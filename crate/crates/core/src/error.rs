use std::fmt;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("model evaluation failed: {what} returned {value}")]
    ModelEvaluation { what: String, value: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("simulation failed at t = {time}: {reason}")]
    Simulation { time: f64, reason: String },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("ODE integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPoint { iterations: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent path at node {node}: {reason}")]
    Path { node: usize, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("rate of reaction {reaction} at or below the floor on [{t_start}, {t_end}]")]
    RateFloor {
        reaction: usize,
        t_start: f64,
        t_end: f64,
    },

    #[error("Euler-Lagrange singularity in reaction {reaction}: {reason}")]
    Singularity { reaction: usize, reason: String },

    #[error("singular Hessian of the contracted Lagrangian (condition estimate {condition:e})")]
    Stiffness { condition: f64 },

    #[error("shooting trajectory escaped at t = {time}: {reason}")]
    Shooting { time: f64, reason: String },

    #[error("boundary-value solve failed: {}", .0.join("; "))]
    Bvp(Vec<String>),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// The innermost error, looking through stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Trajectory { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn model_eval(what: impl fmt::Display, value: f64) -> Error {
        Error::ModelEvaluation {
            what: what.to_string(),
            value,
        }
    }
}
