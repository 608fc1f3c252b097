use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pair (A, b) is not controllable (Kalman rank {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },

    #[error("ill-conditioned linear solve: {0}")]
    Conditioning(String),

    #[error("no admissible beta down to {smallest_beta:e}: order {order} reaches {sup:.6e} > {limit:.6e} at state {witness:?}")]
    CertificationFailed {
        smallest_beta: f64,
        order: usize,
        sup: f64,
        limit: f64,
        witness: Vec<f64>,
    },

    #[error("simulation diverged after step {last_finite}")]
    Divergence { last_finite: usize },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
