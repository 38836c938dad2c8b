use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid window set: {0}")]
    InvalidWindowSet(String),

    #[error("quadrature did not converge within depth budget (estimate {estimate}, error bound {error})")]
    QuadratureNotConverged { estimate: f64, error: f64 },

    #[error("myerson payment {value} is materially negative; cold-start probability is not monotone in the report")]
    NegativePayment { value: f64 },

    #[error("realized externality payment requires a sampled window")]
    MissingSampledWindow,

    #[error("theta {theta} is not on the report grid")]
    ThetaNotInGrid { theta: f64 },

    #[error("need at least {required} arrivals, got {got}")]
    TooFewArrivals { required: usize, got: usize },

    #[error("{path}: missing application id column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}:{line}: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
