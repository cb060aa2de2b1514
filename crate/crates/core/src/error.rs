use thiserror::Error;

/// Errors raised by generators, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside its admissible range.
    #[error("invalid `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    /// Inconsistent vector or matrix dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A system that must be positive definite was not (numerically).
    #[error("{what} is numerically singular (condition estimate {condition_estimate:.3e})")]
    Singular {
        what: &'static str,
        condition_estimate: f64,
    },

    /// NaN or infinity appeared inside an iterative solver.
    #[error("numerical divergence at inner iteration {iteration}{}", em_context(.em_iteration))]
    Divergence {
        iteration: usize,
        em_iteration: Option<usize>,
        /// Mean estimate from the last iteration that was still finite.
        last_finite_x: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(String),

    #[error("malformed fixture: {0}")]
    Format(String),
}

fn em_context(em: &Option<usize>) -> String {
    match em {
        Some(i) => format!(" (EM iteration {i})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        field,
        reason: reason.into(),
    }
}
