//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operands describe systems of different size.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The requested dense table or operator exceeds the desk-scale cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A per-basis transition matrix cannot be inverted.
    #[error("transition matrix for basis {basis} is near-singular (|det| = {det:.3e})")]
    SingularBasis { basis: String, det: f64 },

    /// A basis group lost all of its probability mass.
    #[error("basis group {group} has no surviving probability mass")]
    DegenerateGroup { group: String },

    /// Measured transmissions are inconsistent with a single 2x2 operator.
    #[error("port operator fit failed: {0}")]
    Fit(String),

    /// No optimizer start satisfied the convergence criterion. The best
    /// parameters found so far are attached.
    #[error("calibration did not converge (best objective {objective:.6})")]
    NonConvergence {
        objective: f64,
        best: Box<crate::calibrate::CalibrationResult>,
    },

    /// A shot set contained no surviving records.
    #[error("no surviving shots")]
    NoSurvivingShots,

    /// Malformed input file or record.
    #[error("data format error: {0}")]
    DataFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
