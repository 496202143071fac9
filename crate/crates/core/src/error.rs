use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("covariance matrix is not positive definite: pivot {index} = {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("circulant embedding has a negative eigenvalue: index {index} = {value:e}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {context} at node {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("integration failed on mode {mode}: {source}")]
    Mode {
        mode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stationary solver diverged after {iterations} iterations (last ratios {ratios:?})")]
    Divergence { iterations: usize, ratios: Vec<f64> },

    #[error("solution blew up at t = {time}: |U|_2 = {norm:e}")]
    BlowUp {
        time: f64,
        norm: f64,
        trace: Vec<(f64, f64)>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
