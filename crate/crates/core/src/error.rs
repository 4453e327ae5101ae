use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not invertible (smallest pivot magnitude {pivot:e})")]
    NonInvertible { pivot: f64 },

    #[error("dimension {0} is not supported here (only d = 2)")]
    UnsupportedDimension(usize),

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no geometric decay observed in the corrector series (fitted ratio {ratio:.4})")]
    NoDecay { ratio: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("conditioning infeasible: estimated acceptance rate {rate:e} after {paths} paths")]
    InfeasibleConditioning { rate: f64, paths: usize },

    #[error("probability mass drifted by {drift:e} at step {step}")]
    MassDrift { step: usize, drift: f64 },
}

pub type Result<T> = std::result::Result<T, LabError>;
