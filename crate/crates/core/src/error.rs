use thiserror::Error;

use crate::domain::Vector;

pub type Result<T> = std::result::Result<T, MfgcError>;

#[derive(Debug, Error)]
pub enum MfgcError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: must satisfy {constraint}")]
    Parameter {
        name: &'static str,
        constraint: String,
    },

    #[error("summary kind mismatch: model reads {expected:?}, law carries {found:?}")]
    SummaryKind {
        expected: crate::models::SummaryKind,
        found: crate::models::SummaryKind,
    },

    #[error(
        "inner optimization did not converge after {iterations} iterations \
         (gradient norm {grad_norm:e}, best iterate {best:?})"
    )]
    NumericFailure {
        best: Vector,
        grad_norm: f64,
        iterations: usize,
    },

    #[error("control fixed point did not converge after {iterations} iterations (last residual {last:e})")]
    FixedPoint {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("non-finite value produced at time index {time_index}")]
    NonFinite { time_index: usize },

    #[error("density became negative ({min:e}) at time index {time_index}")]
    Negativity { time_index: usize, min: f64 },

    #[error("drift map error: {0}")]
    Drift(String),

    #[error("solve failed at theta = {theta}, outer iteration {outer_iteration}, time index {time_index}: {source}")]
    Outer {
        theta: f64,
        outer_iteration: usize,
        time_index: usize,
        #[source]
        source: Box<MfgcError>,
    },
}

impl MfgcError {
    pub(crate) fn param(name: &'static str, constraint: impl Into<String>) -> Self {
        MfgcError::Parameter {
            name,
            constraint: constraint.into(),
        }
    }
}
