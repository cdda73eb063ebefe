//! Method-of-steps integration of retarded functional differential equations
//! `ẋ(t) = f(t, d(t), T_r(t)x, u(t))` with piecewise-constant disturbances.

mod disturbance;
mod integrate;
mod order;
mod record;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::history::{HistoryError, HistorySegment};
use crate::scalar::Real;

pub use disturbance::{make_disturbance, random_history, DisturbanceSignal};
pub use integrate::{integrate, integrate_with, IntegrateOptions, Scheme};
pub use order::{order_check, OrderProblem, OrderReport};
pub use record::{Status, TrajectoryRecord};

/// Right-hand side `(t, d, x, u, out)`; `out` has length `n`.
pub type Rhs<T> =
    Arc<dyn Fn(T, &[T], &HistorySegment<T>, &[T], &mut [T]) -> Result<(), String> + Send + Sync>;

/// Blow-up threshold on the Euclidean state norm.
pub const BLOW_UP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step {dt} does not divide {what} = {value}")]
    Incompatible { dt: f64, what: &'static str, value: f64 },
    #[error("horizon must exceed the initial time")]
    EmptyHorizon,
    #[error("initial history: {0}")]
    History(#[from] HistoryError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("disturbance box component {index} is empty: [{lo}, {hi}]")]
    DegenerateBox { index: usize, lo: f64, hi: f64 },
    #[error("dwell must be positive")]
    BadDwell,
    #[error("f(t, d, 0, 0) = {value} != 0 at t = {t}")]
    NonzeroEquilibrium { t: f64, value: f64 },
}

/// `ẋ = f(t, d, x, u)` with `d ∈ D` (a box) and `u ∈ U` (a box, one interval
/// per input).
#[derive(Clone)]
pub struct GeneralRfdeSpec<T: Real> {
    pub dim: usize,
    pub r: T,
    pub rhs: Rhs<T>,
    pub disturbance_box: Vec<(T, T)>,
    pub control_set: Vec<(T, T)>,
}

impl<T: Real> fmt::Debug for GeneralRfdeSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralRfdeSpec")
            .field("dim", &self.dim)
            .field("r", &self.r)
            .field("disturbance_box", &self.disturbance_box)
            .field("control_set", &self.control_set)
            .finish_non_exhaustive()
    }
}

impl<T: Real> GeneralRfdeSpec<T> {
    pub fn new(
        dim: usize,
        r: T,
        rhs: impl Fn(T, &[T], &HistorySegment<T>, &[T], &mut [T]) -> Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, r, rhs: Arc::new(rhs), disturbance_box: Vec::new(), control_set: Vec::new() }
    }

    pub fn with_disturbance_box(mut self, b: Vec<(T, T)>) -> Self {
        self.disturbance_box = b;
        self
    }

    pub fn with_control_set(mut self, u: Vec<(T, T)>) -> Self {
        self.control_set = u;
        self
    }

    /// Samples `f(t, d, 0, 0)` at a few times and at the box corners/centre.
    pub fn check_equilibrium(&self, times: &[T]) -> Result<(), SimError> {
        let zero = HistorySegment::zeros(self.r, 8, self.dim)?;
        let u = vec![T::zero(); self.control_set.len().max(1)];
        let mut out = vec![T::zero(); self.dim];
        let corners: [Box<dyn Fn(&(T, T)) -> T>; 3] = [
            Box::new(|b: &(T, T)| b.0),
            Box::new(|b: &(T, T)| b.1),
            Box::new(|b: &(T, T)| (b.0 + b.1) * T::lit(0.5)),
        ];
        for &t in times {
            for pick in &corners {
                let d: Vec<T> = self.disturbance_box.iter().map(pick).collect();
                (self.rhs)(t, &d, &zero, &u, &mut out).map_err(|_| SimError::NonzeroEquilibrium {
                    t: t.as_f64(),
                    value: f64::NAN,
                })?;
                if let Some(v) = out.iter().find(|v| **v != T::zero()) {
                    return Err(SimError::NonzeroEquilibrium { t: t.as_f64(), value: v.as_f64() });
                }
            }
        }
        Ok(())
    }
}

/// `Pr_U(u)` componentwise; inputs beyond the declared set pass through.
pub(crate) fn project<T: Real>(u: &mut [T], set: &[(T, T)]) {
    for (v, &(lo, hi)) in u.iter_mut().zip(set) {
        *v = v.max(lo).min(hi);
    }
}

/// `k` such that `a = k·b`, if `a/b` is an integer within roundoff.
pub(crate) fn exact_ratio(a: f64, b: f64) -> Option<usize> {
    let q = a / b;
    let k = q.round();
    (k >= 1.0 && (q - k).abs() <= 1e-9 * k).then_some(k as usize)
}
