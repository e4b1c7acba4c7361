use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("missing history: {0}")]
    MissingHistory(String),

    #[error("tolerance {requested:e} unachievable (best bound {achievable:e})")]
    ToleranceUnachievable { requested: f64, achievable: f64 },

    #[error(
        "fixed-point iteration failed at level {level} after {iterations} iterations: \
         last increment {residual:e}, a0 = {a0:e} ({reason}); time step likely too large"
    )]
    NonConvergence {
        level: usize,
        iterations: usize,
        residual: f64,
        a0: f64,
        reason: &'static str,
    },

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("step size {tau:e} exceeds the solvability bound {tau_star:e}")]
    StepRestriction { tau: f64, tau_star: f64 },

    #[error("monitor violation: {0}")]
    Monitor(String),

    #[error("memory budget exceeded: {0}")]
    MemoryBudget(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
