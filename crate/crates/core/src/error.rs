use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CateError {
    #[error("insufficient data for {context}: need at least {needed} rows, got {got}")]
    InsufficientData {
        context: String,
        needed: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("treatment arm W={arm} is empty ({context})")]
    EmptyTreatmentArm { arm: u8, context: String },

    #[error("propensity estimate {value} at row {row} is not strictly inside (0, 1)")]
    ExtremePropensity { row: usize, value: f64 },

    #[error("residualized treatment W - e(x) = {residual} at row {row} is numerically zero")]
    DegenerateResidualTreatment { row: usize, residual: f64 },

    #[error("fold {fold} is too small for the {role} role: {reason}")]
    FoldTooSmall {
        fold: usize,
        role: String,
        reason: String,
    },

    #[error("data generation stalled after {attempts} attempts: {reason}")]
    GenerationStalled { attempts: usize, reason: String },

    #[error("at least {needed} replications are required, got {got}")]
    InsufficientReplications { needed: usize, got: usize },

    #[error("missing column `{column}` in {path}")]
    SchemaError { column: String, path: String },

    #[error("cannot parse `{value}` at row {row}, column `{column}`")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl CateError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CateError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CateError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that the design-3 redraw guard is allowed to absorb.
    pub fn is_propensity_degeneracy(&self) -> bool {
        matches!(
            self,
            CateError::ExtremePropensity { .. } | CateError::DegenerateResidualTreatment { .. }
        )
    }
}
