use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument is outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates an invariant.
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an API contract (e.g. fed an infeasible trajectory).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The brute-force enumerator refused to search a space above its cap.
    #[error("enumeration needs cap >= {required} joint trajectories, configured cap is {cap}")]
    CapExceeded { required: u128, cap: u128 },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
