use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empirical measure must have at least one atom")]
    EmptyMeasure,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integration diverged at step {step} (|x| = {magnitude:e})")]
    IntegrationDiverged { step: usize, magnitude: f64 },

    #[error("Hamiltonian is not convex in theta (smallest Hessian eigenvalue {eigenvalue:e} below floor {floor:e})")]
    NonConvex { eigenvalue: f64, floor: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("mode violation: {0}")]
    ModeViolation(String),

    #[error("Riccati blow-up at step {step} (max |Y| = {magnitude:e})")]
    RiccatiBlowUp { step: usize, magnitude: f64 },

    #[error("CFL condition violated: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("trajectory left the grid at t = {time}, x = {x}; widen [x_lo, x_hi]")]
    GridExit { time: f64, x: f64 },

    #[error("model validation failed: {0}")]
    ModelValidation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
