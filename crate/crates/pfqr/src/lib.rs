//! Partial functional linear composite quantile regression.
//!
//! Functional predictors are mapped to wavelet coefficients, a composite
//! quantile check loss is penalized with a sparse group lasso, and the
//! resulting convex program is solved by a nested ADMM. A second-order cone
//! reformulation is available for interchange with external conic solvers,
//! together with tuning criteria (GIC / validation), evaluation metrics and
//! a seeded simulation generator.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod simgen;
pub mod socp;
pub mod tuning;
pub mod wavelet;

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
