use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A feasibility gate failed (for example `gamma0 < xi_breve`).
    #[error("feasibility gate failed: {0}")]
    Feasibility(String),

    #[error("quadrature did not converge for {what}: estimate {estimate:e}, error {error:e}")]
    Quadrature {
        what: String,
        estimate: f64,
        error: f64,
    },

    #[error("model inconsistency: {0}")]
    Model(String),

    #[error("family tree exceeded {cap} records; gamma0/T outside the tested regime")]
    RunawayTree { cap: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("stability: {0}")]
    Stability(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
