use std::path::PathBuf;

use thiserror::Error;

use crate::model::ParamDiagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("coefficient must be strictly positive, got {value} at ({x}, {y})")]
    InvalidCoefficient { value: f64, x: f64, y: f64 },

    #[error("conflicting Dirichlet values for node {node}: {first} vs {second}")]
    DirichletConflict {
        node: usize,
        first: f64,
        second: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("argument {x} outside supported domain |x| <= {limit}")]
    OutOfDomain { x: f64, limit: f64 },

    #[error("{what} did not converge after {iterations} iterations (last change {change:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        change: f64,
    },

    #[error("linear solver {solver} failed after {iterations} iterations, relative residual {residual:e}")]
    LinearSolver {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix: zero pivot in column {0}")]
    SingularMatrix(usize),

    #[error("inconsistent state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    ConfigSyntax {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("parameter validation failed: {0}")]
    Params(ParamDiagnostic),

    #[error("step {step} (t = {t}): fixed-point iteration did not converge, last relative change {change:e}")]
    StepDivergence { step: usize, t: f64, change: f64 },

    #[error("step {step} (t = {t}): {source}")]
    AtStep {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error stems from user input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidCoefficient { .. }
            | Error::InvalidData(_)
            | Error::Config(_)
            | Error::ConfigSyntax { .. }
            | Error::Params(_)
            | Error::Io { .. } => true,
            Error::AtStep { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
