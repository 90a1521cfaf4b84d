use thiserror::Error;

/// Errors produced by the solver, stability and simulation machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("period must be positive (got {0})")]
    NonPositivePeriod(f64),

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("solution collapsed to an equilibrium (T = {period:.6}, harmonic content {content:.3e})")]
    CollapsedToEquilibrium { period: f64, content: f64 },

    #[error("singular Jacobian in Newton step {step}")]
    SingularJacobian { step: usize },

    #[error("no oscillation detected in the simulation tail (peak-to-peak {amplitude:.3e})")]
    NoOscillationDetected { amplitude: f64 },

    #[error("root refinement diverged from ({0:.6}, {1:.6})")]
    RefinementDiverged(f64, f64),

    #[error("non-finite state encountered at t = {t:.6}")]
    NonFiniteState { t: f64 },

    #[error("time step {dt:.3e} exceeds the limit {limit:.3e} (min positive delay / 10)")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("first continuation step failed: {0}")]
    FirstStepFailed(Box<Error>),

    #[error("arclength step underflow at parameter {param:.6}")]
    StepUnderflow { param: f64 },

    #[error("no oscillation in the classification window")]
    NoOscillation,

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
