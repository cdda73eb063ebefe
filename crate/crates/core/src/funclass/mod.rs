//! Comparison-function machinery: monotone envelopes with derivative bounds,
//! sampled class checks and interval projection.

mod class;
mod envelope;

pub use class::{check_class, ClassFunction, ClassKind, ClassReport, SamplingPlan};
pub use envelope::{
    deriv_sup_numeric, envelope_from_samples, MonotoneEnvelope, PiecewiseLinear, DERIV_SAFETY,
};


use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuncError {
    #[error("empty node list")]
    EmptyNodes,
    #[error("node {index}: value must be positive")]
    NonPositive { index: usize },
    #[error("node {index}: abscissae must be strictly increasing")]
    NotIncreasing { index: usize },
    #[error("node {index}: non-finite entry")]
    NonFinite { index: usize },
    #[error("coefficient {index} must be finite and nonnegative")]
    NegativeCoefficient { index: usize },
    #[error("non-finite derivative at s = {s}")]
    NonFiniteDerivative { s: f64 },
    #[error("{what} violated at s = {s}")]
    InvariantViolated { s: f64, what: &'static str },
    #[error("expression must depend on `s` only: {0}")]
    NotUnivariate(String),
    #[error("empty interval: lo = {lo} > hi = {hi}")]
    EmptyInterval { lo: f64, hi: f64 },
}

/// Projection onto `[lo, hi]`; either bound may be infinite.
pub fn project_interval(u: f64, lo: f64, hi: f64) -> Result<f64, FuncError> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(FuncError::EmptyInterval { lo, hi });
    }
    Ok(u.max(lo).min(hi))
}
