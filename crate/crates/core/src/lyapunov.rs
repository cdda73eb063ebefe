//! Max-type Lyapunov–Krasovskii functionals `V(x) = max_θ e^{2σθ} Q(x(θ))`,
//! their Dini derivatives and trajectory decay certificates.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::history::{HistoryError, HistorySegment};
use crate::scalar::Real;
use crate::sim::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("non-finite difference quotient at h = {h}")]
    NonFinite { h: f64 },
    #[error("Q(x(0)) = {q0} exceeds V(x) = {v}")]
    Inconsistent { q0: f64, v: f64 },
    #[error("V vanishes at the initial time but the trajectory does not")]
    DegenerateNormalization,
    #[error("trajectory did not complete: {0}")]
    NotCompleted(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

pub type QFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
pub type GradFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

#[derive(Clone)]
pub struct MaxTypeFunctional<T: Real> {
    pub sigma: T,
    pub r: T,
    pub q: QFn<T>,
    pub grad_q: GradFn<T>,
}

impl<T: Real> fmt::Debug for MaxTypeFunctional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaxTypeFunctional")
            .field("sigma", &self.sigma)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Real> MaxTypeFunctional<T> {
    pub fn new(
        sigma: T,
        r: T,
        q: impl Fn(&[T]) -> T + Send + Sync + 'static,
        grad_q: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self { sigma, r, q: Arc::new(q), grad_q: Arc::new(grad_q) }
    }

    /// `Q(ξ) = |ξ|²`.
    pub fn quadratic(sigma: T, r: T) -> Self {
        Self::new(
            sigma,
            r,
            |x: &[T]| dot(x, x),
            |x: &[T]| x.iter().map(|&v| v + v).collect(),
        )
    }

    pub fn q(&self, x: &[T]) -> T {
        (self.q)(x)
    }

    fn weight(&self, theta: T) -> T {
        (T::lit(2.0) * self.sigma * theta).exp()
    }

    /// `V` on a piecewise-linear path given by `(θ, x)` nodes.
    ///
    /// Node values first; segments next to each discrete local maximum are
    /// refined by bisection on the sign of `d/dθ [e^{2σθ} Q(x(θ))]`.
    pub fn eval_path(&self, nodes: &[(T, Vec<T>)]) -> T {
        let g: Vec<T> = nodes.iter().map(|(th, x)| self.weight(*th) * self.q(x)).collect();
        let mut best = g.iter().copied().fold(T::zero(), T::max);
        if best == T::zero() {
            return best;
        }
        let n = nodes.len();
        let mut seen = vec![false; n.saturating_sub(1)];
        for k in 0..n {
            let left_ok = k == 0 || g[k] >= g[k - 1];
            let right_ok = k + 1 == n || g[k] >= g[k + 1];
            if !(left_ok && right_ok) {
                continue;
            }
            for seg in [k.wrapping_sub(1), k] {
                if seg < seen.len() && !seen[seg] {
                    seen[seg] = true;
                    best = best.max(self.segment_max(&nodes[seg], &nodes[seg + 1]));
                }
            }
        }
        best
    }

    fn segment_max(&self, a: &(T, Vec<T>), b: &(T, Vec<T>)) -> T {
        let (ta, tb) = (a.0, b.0);
        let len = tb - ta;
        if !(len > T::zero()) {
            return T::zero();
        }
        let slope: Vec<T> = a.1.iter().zip(&b.1).map(|(&xa, &xb)| (xb - xa) / len).collect();
        let point = |th: T| -> Vec<T> { a.1.iter().zip(&slope).map(|(&xa, &s)| xa + (th - ta) * s).collect() };
        let two_sigma = T::lit(2.0) * self.sigma;
        let dir = |th: T| -> T {
            let x = point(th);
            two_sigma * self.q(&x) + dot(&(self.grad_q)(&x), &slope)
        };
        let probes = 8;
        let at = |i: usize| ta + len * T::lit(i as f64 / probes as f64);
        let mut best = T::zero();
        let mut prev = dir(ta);
        for i in 1..=probes {
            let next = dir(at(i));
            if prev > T::zero() && next <= T::zero() {
                let (mut lo, mut hi) = (at(i - 1), at(i));
                for _ in 0..60 {
                    let mid = (lo + hi) * T::lit(0.5);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if dir(mid) > T::zero() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                for th in [lo, hi] {
                    best = best.max(self.weight(th) * self.q(&point(th)));
                }
            }
            prev = next;
        }
        best
    }

    pub fn eval_v(&self, x: &HistorySegment<T>) -> T {
        self.eval_path(&x.path())
    }

    /// Bound on the Dini derivative `V⁰(x; v)`: `-2σV` when the maximum sits
    /// strictly inside the window, `max(-2σV, ∇Q(x(0))·v)` on a tie at `θ = 0`.
    pub fn dini_bound(&self, x: &HistorySegment<T>, v: &[T]) -> Result<T, LyapunovError> {
        let vx = self.eval_v(x);
        let q0 = self.q(x.newest());
        let tie = T::lit(1e-9) * (T::one() + vx);
        let decay = -T::lit(2.0) * self.sigma * vx;
        if q0 < vx - tie {
            Ok(decay)
        } else if q0 <= vx + tie {
            Ok(decay.max(dot(&(self.grad_q)(x.newest()), v)))
        } else {
            Err(LyapunovError::Inconsistent { q0: q0.as_f64(), v: vx.as_f64() })
        }
    }
}

/// Free-function form of [`MaxTypeFunctional::eval_v`].
pub fn eval_v<T: Real>(f: &MaxTypeFunctional<T>, x: &HistorySegment<T>) -> T {
    f.eval_v(x)
}

/// Free-function form of [`MaxTypeFunctional::dini_bound`].
pub fn dini_bound_maxtype<T: Real>(
    f: &MaxTypeFunctional<T>,
    x: &HistorySegment<T>,
    v: &[T],
) -> Result<T, LyapunovError> {
    f.dini_bound(x, v)
}

/// `h_k = 10⁻²·2⁻ᵏ`, `k = 0..=12`.
pub fn default_schedule<T: Real>() -> Vec<T> {
    (0..=12).map(|k| T::lit(1e-2 * f64::powi(0.5, k))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiniEstimate<T> {
    /// Maximum of the four smallest-`h` quotients.
    pub estimate: T,
    /// `(h, quotient)` for the whole schedule.
    pub table: Vec<(T, T)>,
}

/// Difference quotients `(V(E_h(x; v)) - V(x)) / h` on the exact shifted path.
pub fn dini_upper_estimate<T: Real>(
    f: &MaxTypeFunctional<T>,
    x: &HistorySegment<T>,
    v: &[T],
    schedule: &[T],
) -> Result<DiniEstimate<T>, LyapunovError> {
    let v0 = f.eval_v(x);
    let mut table = Vec::with_capacity(schedule.len());
    for &h in schedule {
        let path = x.shift_path(v, h)?;
        let quotient = (f.eval_path(&path) - v0) / h;
        if !quotient.is_finite() {
            return Err(LyapunovError::NonFinite { h: h.as_f64() });
        }
        table.push((h, quotient));
    }
    let mut by_h = table.clone();
    by_h.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite schedule"));
    let estimate = by_h.iter().take(4).map(|p| p.1).fold(T::neg_infinity(), T::max);
    Ok(DiniEstimate { estimate, table })
}

pub type RateFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone)]
pub enum DecayMode<T: Real> {
    /// `e^{2σ(t-t0)} V(t)` nonincreasing and bounded by `V(t0)`.
    Exponential { sigma: T },
    /// `ΔV/Δt ≤ -ρ(V) + q(t)`.
    Dissipation { rho: RateFn<T>, q: RateFn<T> },
}

impl<T: Real> fmt::Debug for DecayMode<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecayMode::Exponential { sigma } => write!(f, "Exponential {{ sigma: {sigma} }}"),
            DecayMode::Dissipation { .. } => f.write_str("Dissipation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub mode: String,
    pub pass: bool,
    pub worst_margin: f64,
    pub worst_time: f64,
    pub tolerance: f64,
    pub samples: usize,
    /// `V(T_r(t_k)x)` per recorded step.
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Checks decay of `V` along a completed trajectory.
pub fn certify_decay<T: Real>(
    traj: &TrajectoryRecord<T>,
    f: &MaxTypeFunctional<T>,
    mode: &DecayMode<T>,
    tol: f64,
) -> Result<CertReport, LyapunovError> {
    if !traj.status.is_completed() {
        return Err(LyapunovError::NotCompleted(traj.status.label().into()));
    }
    let values: Vec<T> = (0..traj.len()).map(|k| f.eval_v(&traj.window(k))).collect();
    certify_values(&values, traj, mode, tol)
}

/// As [`certify_decay`] with precomputed `V` samples, one per recorded step.
pub fn certify_values<T: Real>(
    values: &[T],
    traj: &TrajectoryRecord<T>,
    mode: &DecayMode<T>,
    tol: f64,
) -> Result<CertReport, LyapunovError> {
    let times = &traj.times;
    let t0 = times[0];
    let mut worst = (f64::NEG_INFINITY, t0.as_f64());
    let mut push = |margin: f64, t: T| {
        if margin > worst.0 || margin.is_nan() {
            worst = (margin, t.as_f64());
        }
    };
    let label = match mode {
        DecayMode::Exponential { sigma } => {
            let v0 = values[0];
            if v0 == T::zero() {
                let nonzero = traj
                    .initial()
                    .samples()
                    .iter()
                    .chain(traj.states.iter().flatten())
                    .any(|v| *v != T::zero());
                if nonzero {
                    return Err(LyapunovError::DegenerateNormalization);
                }
                push(0.0, t0);
            } else {
                let two_sigma = T::lit(2.0) * *sigma;
                let mut prev = T::one();
                for (k, (&t, &v)) in times.iter().zip(values).enumerate() {
                    let w = (two_sigma * (t - t0)).exp() * v / v0;
                    let mut margin = (w - T::one()).as_f64();
                    if k > 0 {
                        margin = margin.max((w - prev).as_f64());
                    }
                    push(margin, t);
                    prev = w;
                }
            }
            "exponential"
        }
        DecayMode::Dissipation { rho, q } => {
            for k in 0..values.len().saturating_sub(1) {
                let (ta, tb) = (times[k], times[k + 1]);
                let quotient = (values[k + 1] - values[k]) / (tb - ta);
                let bound = -rho(values[k]).min(rho(values[k + 1])) + q(ta).max(q(tb));
                push((quotient - bound).as_f64(), tb);
            }
            "dissipation"
        }
    };
    let worst_margin = if worst.0 == f64::NEG_INFINITY { 0.0 } else { worst.0 };
    Ok(CertReport {
        mode: label.into(),
        pass: worst_margin <= tol,
        worst_margin,
        worst_time: worst.1,
        tolerance: tol,
        samples: values.len(),
        values: values.iter().map(|v| v.as_f64()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{integrate, DisturbanceSignal, GeneralRfdeSpec};

    type H = HistorySegment<f64>;

    #[test]
    fn v_examples() {
        let f = MaxTypeFunctional::quadratic(0.5, 1.0);
        assert_eq!(f.eval_v(&H::constant(1.0, 16, &[3.0]).unwrap()), 9.0);
        let x = H::from_fn(1.0, 64, 1, |t: f64| vec![t.exp()]).unwrap();
        assert!((f.eval_v(&x) - 1.0).abs() < 1e-15);
        assert_eq!(f.eval_v(&H::zeros(1.0, 16, 2).unwrap()), 0.0);
    }

    #[test]
    fn interior_maximum_is_refined() {
        let f = MaxTypeFunctional::quadratic(3.0, 1.0);
        let x = H::from_fn(1.0, 2, 1, |t: f64| vec![-t]).unwrap();
        let exact = (-2.0f64).exp() / 9.0;
        assert!((f.eval_v(&x) - exact).abs() < 1e-12);
    }

    #[test]
    fn sandwich_holds() {
        let f = MaxTypeFunctional::quadratic(0.3, 1.0);
        let x = H::from_fn(1.0, 32, 2, |t: f64| vec![(3.0 * t).sin(), (t * 5.0).cos()]).unwrap();
        let v = f.eval_v(&x);
        let grid_max = (0..=32).map(|k| f.q(x.sample(k))).fold(0.0, f64::max);
        assert!(f.q(x.newest()) <= v);
        assert!(v <= grid_max);
        assert!(v >= (-0.6f64).exp() * grid_max);
    }

    #[test]
    fn bound_examples() {
        let f = MaxTypeFunctional::quadratic(0.5, 1.0);
        let x = H::constant(1.0, 16, &[2.0]).unwrap();
        assert_eq!(f.dini_bound(&x, &[-4.0]), Ok(-4.0));
        assert_eq!(f.dini_bound(&x, &[1.0]), Ok(4.0));
        let z = H::from_fn(1.0, 16, 1, |t: f64| vec![-t]).unwrap();
        let vz = f.eval_v(&z);
        assert_eq!(f.dini_bound(&z, &[100.0]), Ok(-vz));
        assert_eq!(f.dini_bound(&z, &[-100.0]), Ok(-vz));
    }

    #[test]
    fn estimate_examples() {
        let f = MaxTypeFunctional::quadratic(1.0, 1.0);
        let x = H::constant(1.0, 16, &[1.0]).unwrap();
        let e = dini_upper_estimate(&f, &x, &[0.0], &default_schedule()).unwrap();
        assert!(e.estimate <= 1e-6, "{e:?}");
        assert_eq!(e.table.len(), 13);

        let f = MaxTypeFunctional::quadratic(0.5, 1.0);
        let x = H::constant(1.0, 16, &[2.0]).unwrap();
        let e = dini_upper_estimate(&f, &x, &[-4.0], &default_schedule()).unwrap();
        assert!(e.estimate <= -4.0 + 1e-3, "{e:?}");

        let z = H::from_fn(1.0, 16, 1, |t: f64| vec![-t]).unwrap();
        let e = dini_upper_estimate(&f, &z, &[7.0], &default_schedule()).unwrap();
        assert!(e.estimate <= -f.eval_v(&z) + 1e-3, "{e:?}");
    }

    fn scalar_run(rate: f64, x0: f64) -> TrajectoryRecord<f64> {
        let spec = GeneralRfdeSpec::new(1, 1.0, move |_, _, x: &H, _, out: &mut [f64]| {
            out[0] = -rate * x.newest()[0];
            Ok(())
        });
        let init = H::constant(1.0, 64, &[x0]).unwrap();
        let d = DisturbanceSignal::zero(0, 1.0 / 64.0);
        integrate(&spec, &init, &d, |_, _| vec![], 0.0, 5.0, 1.0 / 64.0).unwrap()
    }

    #[test]
    fn decay_certificates() {
        let f = MaxTypeFunctional::quadratic(1.0, 1.0);
        let mode = DecayMode::Exponential { sigma: 1.0 };
        let rep = certify_decay(&scalar_run(2.0, 1.0), &f, &mode, 1e-3).unwrap();
        assert!(rep.pass, "{rep:?}");
        let rep = certify_decay(&scalar_run(2.0, 0.0), &f, &mode, 1e-3).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_margin, 0.0);
        let rep = certify_decay(&scalar_run(0.1, 1.0), &f, &mode, 1e-3).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn dissipation_mode() {
        let f = MaxTypeFunctional::quadratic(1.0, 1.0);
        let tr = scalar_run(2.0, 1.0);
        let ok = DecayMode::Dissipation { rho: Arc::new(|v: f64| v), q: Arc::new(|_| 0.0) };
        assert!(certify_decay(&tr, &f, &ok, 1e-3).unwrap().pass);
        let bad = DecayMode::Dissipation { rho: Arc::new(|v: f64| 10.0 * v), q: Arc::new(|_| 0.0) };
        assert!(!certify_decay(&tr, &f, &bad, 1e-3).unwrap().pass);
    }

    #[test]
    fn degenerate_normalization() {
        let f = MaxTypeFunctional::new(
            1.0,
            1.0,
            |x: &[f64]| (x[0] - 1.0).max(0.0).powi(2),
            |x: &[f64]| vec![2.0 * (x[0] - 1.0).max(0.0)],
        );
        let spec = GeneralRfdeSpec::new(1, 1.0, |_, _, _, _, out: &mut [f64]| {
            out[0] = 1.0;
            Ok(())
        });
        let init = H::constant(1.0, 8, &[0.5]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let tr = integrate(&spec, &init, &d, |_, _| vec![], 0.0, 2.0, 0.125).unwrap();
        let mode = DecayMode::Exponential { sigma: 1.0 };
        assert_eq!(certify_decay(&tr, &f, &mode, 1e-3), Err(LyapunovError::DegenerateNormalization));
    }

    #[test]
    fn report_json_shape() {
        let f = MaxTypeFunctional::quadratic(1.0, 1.0);
        let mode = DecayMode::Exponential { sigma: 1.0 };
        let rep = certify_decay(&scalar_run(2.0, 1.0), &f, &mode, 1e-3).unwrap();
        let j = serde_json::to_value(&rep).unwrap();
        let mut keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, vec!["mode", "pass", "samples", "tolerance", "worst_margin", "worst_time"]);
    }
}
