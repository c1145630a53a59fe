use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that the command-line front end can map them onto
/// exit codes: configuration problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum DdmError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{solver} did not converge after {iterations} iterations (final violation {violation:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        violation: f64,
    },

    #[error("training diverged for class {label} at epoch {epoch}: {reason}")]
    Diverged {
        label: u32,
        epoch: usize,
        reason: String,
        /// Parameters at the end of the last epoch with a finite cost.
        checkpoint: Box<crate::hddm::HddmParams>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DdmError {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        DdmError::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DdmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        DdmError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DdmError::NonFinite { .. } | DdmError::NoConvergence { .. } | DdmError::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DdmError>;
