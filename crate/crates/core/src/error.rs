//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by graph construction, scenario validation, and the
/// simulation engine.
#[derive(Error, Debug)]
pub enum Error {
    /// A dimension constraint was violated (empty vector, mismatched lengths,
    /// matrix size below the minimum).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A query was made for a time earlier than the anchoring sample.
    #[error("temporal order error: {0}")]
    TemporalOrder(String),

    /// Scenario-level validation failed. Carries one message per issue.
    #[error("scenario validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// The schedule does not provide integral connectivity and the check was
    /// not waived. Reports the first failing window.
    #[error("integral-connectivity check failed on window [{window_start}, {window_end}] s")]
    ScenarioRejected { window_start: f64, window_end: f64 },

    /// A state became non-finite during integration.
    #[error("numeric failure at step {step} (t = {t} s): {what}")]
    Numeric { step: usize, t: f64, what: String },

    /// An internal invariant that should be unreachable was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
