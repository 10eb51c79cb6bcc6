use thiserror::Error;

/// Errors produced by the numerical kernels, environments, agents and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature vector is not on the simplex: {0}")]
    NotOnSimplex(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("fail-state precondition violated: min value {0} > 0")]
    NoFailState(f64),

    #[error("degenerate reference policy at step {step}: all mass is zero")]
    DegenerateReference { step: usize },

    #[error("policy puts mass {mass} on action {action}, which has zero reference mass")]
    SupportViolation { action: usize, mass: f64 },

    #[error("step {step} out of range for horizon {horizon}")]
    StepOutOfRange { step: usize, horizon: usize },

    #[error("operation requires a tabular environment")]
    NotTabular,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run `{run_id}` failed: {source}")]
    RunFailed {
        run_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
