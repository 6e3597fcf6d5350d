use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A covariance or scatter matrix could not be factorized, or the data
    /// are too degenerate to estimate one.
    #[error("estimation failed: {0}")]
    EstimationFailure(String),

    /// The label track makes the observed sequence impossible under the model.
    #[error("labeling is impossible under the model at t={t}")]
    ImpossibleLabeling { t: usize },

    /// A state received (almost) no posterior mass during an EM step.
    #[error("state {state} is starved (total posterior mass {mass:e})")]
    StarvedState { state: usize, mass: f64 },

    #[error("every candidate model failed: {0}")]
    ModelSelection(String),

    #[error("endpoint constraint is infeasible: {0}")]
    InfeasibleConstraint(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The label oracle could not answer a query for time `t`.
    #[error("label oracle failed at t={t}: {reason}")]
    Oracle { t: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come from the numerics rather than from I/O or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EstimationFailure(_)
                | Error::ImpossibleLabeling { .. }
                | Error::StarvedState { .. }
                | Error::ModelSelection(_)
                | Error::InfeasibleConstraint(_)
        )
    }
}
