use thiserror::Error;

pub type Result<T> = std::result::Result<T, GhcmError>;

#[derive(Debug, Error)]
pub enum GhcmError {
    /// A caller broke an operation's precondition (dimension mismatch, missing
    /// observation between vertices that must be visible, partial labeling, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Phase constants do not exist: the effective intensity times the unit-ball
    /// volume must exceed one.
    #[error("infeasible regime: lambda' * nu_d = {lambda_nu} <= 1")]
    Infeasible { lambda_nu: f64 },

    #[error("unsupported kernel pair: {0}")]
    UnsupportedKernel(String),

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("resource guard: {0}")]
    Guard(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GhcmError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        GhcmError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        GhcmError::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        GhcmError::Format(msg.into())
    }
}
