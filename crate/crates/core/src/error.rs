use thiserror::Error;

/// Errors produced by the simulation engine, solvers and CLI front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative numerical routine hit its iteration cap.
    #[error("numerical failure in {routine}: residual {residual:.3e} after {iterations} iterations")]
    NumericalFailure {
        routine: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("convergence failure in {routine}: residual {residual:.3e} after {iterations} iterations")]
    ConvergenceFailure {
        routine: &'static str,
        residual: f64,
        iterations: usize,
        /// Best iterate reached, flattened.
        best: Vec<f64>,
    },

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailure { attempts: usize, reason: String },

    #[error("state norm {norm:.3e} exceeded divergence guard at iteration {iteration}")]
    Diverged { iteration: usize, norm: f64 },

    /// One of the standing assumptions of the method fails for the given input.
    #[error("assumption {index} ({name}) violated: {detail}")]
    Assumption {
        index: u8,
        name: &'static str,
        detail: String,
    },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NumericalFailure { .. } => "numerical-failure",
            Error::ConvergenceFailure { .. } => "convergence-failure",
            Error::GenerationFailure { .. } => "generation-failure",
            Error::Diverged { .. } => "diverged",
            Error::Assumption { .. } => "assumption-violated",
            Error::Inconsistent(_) => "inconsistent",
            Error::Infeasible(_) => "infeasible",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
