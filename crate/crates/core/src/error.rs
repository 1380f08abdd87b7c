//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural/config precondition is violated (cell geometry, plan
    /// parameters, mismatched dimensions, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Disorder lookup outside the materialized space-time box.
    #[error("coordinate (n={n}, x={x:?}) outside field box (time 1..={time_extent}, |x|_inf <= {radius})")]
    OutOfBox {
        n: i64,
        x: Vec<i64>,
        time_extent: i64,
        radius: i64,
    },

    /// An exact computation would exceed its memory/step budget.
    #[error("resource budget exceeded for {what}: required {required}, budget {budget}")]
    Resource {
        what: String,
        required: u64,
        budget: u64,
    },

    /// The system size demanded by the asymptotic theory is not computable.
    #[error(
        "theorem scale unreachable: beta={beta}, eps={eps} requires N ~ {required:.3e} > cap {cap}"
    )]
    ScaleUnreachable {
        beta: f64,
        eps: f64,
        required: f64,
        cap: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
