use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Configuration rejected by a precondition of the planner or the bounds,
    /// e.g. the `eta_2 >= 0` condition of the small-epsilon recursion bound.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible accuracy: {0}")]
    InfeasibleAccuracy(String),

    #[error("degenerate run: {0}")]
    DegenerateRun(String),

    /// A broken internal invariant. Seeing this is a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Stable machine-readable code, used by the CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Unsupported(_) => "unsupported-operation",
            Error::Numeric(_) => "numeric",
            Error::InvalidConfig(_) => "invalid-configuration",
            Error::InfeasibleAccuracy(_) => "infeasible-accuracy",
            Error::DegenerateRun(_) => "degenerate-run",
            Error::Internal(_) => "internal",
        }
    }

    /// The message without the category prefix.
    pub fn message(&self) -> &str {
        match self {
            Error::InvalidArgument(m)
            | Error::Unsupported(m)
            | Error::Numeric(m)
            | Error::InvalidConfig(m)
            | Error::InfeasibleAccuracy(m)
            | Error::DegenerateRun(m)
            | Error::Internal(m) => m,
        }
    }

    /// True for errors caused by bad user input rather than by a bug.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::Numeric(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
