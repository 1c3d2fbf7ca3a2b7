//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at grid index {index}")]
    NonFiniteSample { index: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A configuration or model parameter is out of range; `field` names it.
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("time step {dt} exceeds the stability bound {bound} ({which})")]
    UnstableTimeStep {
        dt: f64,
        bound: f64,
        which: &'static str,
    },

    #[error("non-finite state at step {step} (component {component})")]
    BlowUp { step: usize, component: usize },

    #[error("closed-form equilibrium invalid for these parameters (residual {residual:e})")]
    InvalidEquilibrium { residual: f64 },

    #[error("threshold profile is not strictly monotone on the grid")]
    NonMonotoneProfile,

    #[error("point ({y1}, {ybar1}) lies within {margin} of a singular line")]
    SingularLine { y1: f64, ybar1: f64, margin: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("non-uniform sample grid")]
    NonUniformGrid,

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attach the name of the experiment stage that failed.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (blow-up, singular inputs) as
    /// opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::BlowUp { .. }
            | Error::InvalidEquilibrium { .. }
            | Error::SingularLine { .. }
            | Error::NonFiniteSample { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
