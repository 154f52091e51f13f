//! Crate-wide error type. The variants mirror the failure classes the
//! solvers can hit, and the CLI maps them onto process exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied data was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine failed outright (blow-up, rank deficiency,
    /// bracket exhaustion).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An iterative solver ran out of iterations. The residual history is
    /// carried along so callers can report it instead of guessing a fix.
    #[error("no convergence: {context} (last residuals {residuals:?})")]
    NonConvergence {
        context: String,
        residuals: Vec<f64>,
    },

    /// The model itself is degenerate (e.g. the meeting game with a
    /// vanishing reputation cost, or aggregate capital hitting zero).
    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// The instance falls outside what the solver supports.
    #[error("unsupported instance: {0}")]
    UnsupportedInstance(String),

    /// Scenario configuration problems; all violations are listed, not just
    /// the first.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the CLI: 2 config, 3 numerical
    /// non-convergence, 4 degenerate model, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::NumericalFailure(_) | Error::NonConvergence { .. } => 3,
            Error::Degenerate(_) => 4,
            Error::UnsupportedInstance(_) | Error::Io(_) | Error::Internal(_) => 5,
        }
    }
}
