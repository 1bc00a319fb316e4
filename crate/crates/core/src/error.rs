use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("wave function overflow at x = {x} (|psi| = {magnitude:e})")]
    Overflow { x: f64, magnitude: f64 },

    #[error("integration step {step} does not land on the delta position b = {b}")]
    StepMisaligned { step: f64, b: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (|residual| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shooting Jacobian is singular (condition estimate {condition:e})")]
    JacobianSingular { condition: f64 },

    #[error("dense eigenvalue iteration did not converge (dimension {dim})")]
    NoConvergenceQr { dim: usize },

    #[error("continuation lost level {n_label} at gamma = {gamma}, g = {g}")]
    PathLost { n_label: usize, gamma: f64, g: f64 },

    #[error("not a branch point: {0}")]
    NotABranchPoint(String),

    #[error("no point at gamma = {0} on the requested paths")]
    MissingGamma(f64),

    #[error("insufficient data: need {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Io(err.to_string())
    }
}
