//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad dimension, bad range,
    /// missing charge labels, non-Hermitian input where Hermitian is required).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A sector or parity decomposition was requested for an operator that
    /// does not commute with the corresponding charge.
    #[error("charge not conserved: ‖[H, C]‖_F = {norm:.3e} exceeds {tol:.3e}")]
    ChargeNotConserved { norm: f64, tol: f64 },

    /// A fit target lies outside the attainable range of the observable.
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    /// An iterative numeric procedure failed to converge or produced an
    /// inconsistent result.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Too much ensemble weight sits on Fock-truncated charge sectors for the
    /// truncation to be trusted.
    #[error("truncation guard: weight {mass:.3e} on truncated sectors exceeds {limit:.3e}")]
    TruncationGuard { mass: f64, limit: f64 },

    /// Configuration problems. Carries every validation error found, not just
    /// the first.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 infeasible fit, 4 numeric,
    /// 5 truncation guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::InfeasibleTarget(_) => 3,
            Error::NumericFailure(_) | Error::ChargeNotConserved { .. } | Error::Io(_) => 4,
            Error::TruncationGuard { .. } => 5,
        }
    }
}
