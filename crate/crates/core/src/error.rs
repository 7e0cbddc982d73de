use std::path::PathBuf;

use thiserror::Error;

use crate::transport::DistanceResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("elliptic system is singular: right-hand side mean {mean:e} exceeds tolerance")]
    SingularSystem { mean: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("distance solver stopped at the iteration cap with gap {:e}", .0.primal_dual_gap)]
    DistanceNotConverged(Box<DistanceResult>),

    #[error("bad exponent: {0}")]
    BadExponent(String),

    #[error("mobility derivative is singular at r = 0 when eps = 0")]
    SingularMobility,

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid transport path: {0}")]
    InvalidPath(String),

    #[error("endpoint masses differ: {0:e} vs {1:e}")]
    MassMismatch(f64, f64),

    #[error("step {step} rejected: F_tau = {f_tau:.12e} exceeds the stay-put value {stay:.12e}")]
    StepRejected { step: usize, f_tau: f64, stay: f64 },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Recovers the best iterate from a distance solve that hit its
    /// iteration cap; any other error is passed through.
    pub fn into_best_distance(self) -> Result<DistanceResult> {
        match self {
            Error::DistanceNotConverged(best) => Ok(*best),
            other => Err(other),
        }
    }
}
