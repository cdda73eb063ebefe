use std::sync::Arc;

use serde::Serialize;

use super::ScalarFn;
use crate::history::HistorySegment;
use crate::sim::{integrate, make_disturbance, DisturbanceSignal, GeneralRfdeSpec, SimError};

pub type OdeRhs = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type OdeFeedback = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type OdeV = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type OdeGradV = Arc<dyn Fn(f64, &[f64]) -> (f64, Vec<f64>) + Send + Sync>;

/// `ẋ = f(t, d, x, u)` with `u = k(t, x)` and the dissipation target
/// `∂V/∂t + ∇V·ẋ ≤ -ρ(V) + q(t)`.
#[derive(Clone)]
pub struct OdeProblem {
    pub dim: usize,
    pub rhs: OdeRhs,
    pub feedback: OdeFeedback,
    pub v: OdeV,
    /// `(∂V/∂t, ∇_x V)`.
    pub grad_v: OdeGradV,
    pub rho: ScalarFn<f64>,
    pub q: ScalarFn<f64>,
    pub disturbance_box: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: String,
    pub pass: bool,
    pub worst_margin: f64,
    pub worst_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeCertReport {
    pub pass: bool,
    pub tolerance: f64,
    pub seeds: Vec<SeedOutcome>,
}

/// RK4 runs (one per seed, piecewise-constant `d` with dwell `dwell`) and a
/// midpoint check of the dissipation inequality on every step.
#[allow(clippy::too_many_arguments)]
pub fn ode_certify(
    p: &OdeProblem,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    dwell: f64,
    seeds: &[u64],
    tol: f64,
) -> Result<OdeCertReport, SimError> {
    let r = 2.0 * dt;
    let rhs = p.rhs.clone();
    let spec = GeneralRfdeSpec::new(p.dim, r, move |t, d: &[f64], x: &HistorySegment<f64>, u: &[f64], out: &mut [f64]| {
        rhs(t, d, x.newest(), u, out);
        Ok(())
    })
    .with_disturbance_box(p.disturbance_box.clone());
    let init = HistorySegment::constant(r, 2, x0)?;
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let d = if p.disturbance_box.is_empty() {
            DisturbanceSignal::zero(0, dwell)
        } else {
            make_disturbance(seed, dwell, &p.disturbance_box, 0.0, horizon)?
        };
        let fb = p.feedback.clone();
        let tr = integrate(&spec, &init, &d, move |t, x| fb(t, x.newest()), 0.0, horizon, dt)?;
        let mut worst = (f64::NEG_INFINITY, 0.0);
        let mut ydot = vec![0.0; p.dim];
        for k in 0..tr.len().saturating_sub(1) {
            let tm = tr.times[k] + 0.5 * dt;
            let xm = tr.state_at(tm);
            let u = (p.feedback)(tm, &xm);
            (p.rhs)(tm, &tr.disturbances[k], &xm, &u, &mut ydot);
            let (vt, gv) = (p.grad_v)(tm, &xm);
            let dv = vt + gv.iter().zip(&ydot).map(|(g, y)| g * y).sum::<f64>();
            let margin = dv - (-(p.rho)((p.v)(tm, &xm)) + (p.q)(tm));
            if margin > worst.0 || margin.is_nan() {
                worst = (margin, tm);
            }
        }
        let completed = tr.status.is_completed();
        outcomes.push(SeedOutcome {
            seed,
            status: tr.status.label().into(),
            pass: completed && worst.0 <= tol,
            worst_margin: if worst.0 == f64::NEG_INFINITY { 0.0 } else { worst.0 },
            worst_time: worst.1,
        });
    }
    Ok(OdeCertReport { pass: outcomes.iter().all(|o| o.pass), tolerance: tol, seeds: outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(dist: bool, gain: f64, rho: f64) -> OdeProblem {
        OdeProblem {
            dim: 1,
            rhs: Arc::new(move |_, d, x, u, out| {
                let dd = if dist { d[0] } else { -1.0 };
                out[0] = dd * x[0] + u[0];
            }),
            feedback: Arc::new(move |_, x| vec![gain * x[0]]),
            v: Arc::new(|_, x| 0.5 * x[0] * x[0]),
            grad_v: Arc::new(|_, x| (0.0, vec![x[0]])),
            rho: Arc::new(move |v| rho * v),
            q: Arc::new(|_| 0.0),
            disturbance_box: if dist { vec![(-1.0, 1.0)] } else { vec![] },
        }
    }

    #[test]
    fn analytic_identity() {
        let rep = ode_certify(&problem(false, 0.0, 2.0), &[1.5], 5.0, 0.01, 0.5, &[0], 1e-9).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.seeds[0].worst_margin.abs() < 1e-12);
    }

    #[test]
    fn robust_positive_and_sign_flip() {
        let seeds: Vec<u64> = (0..4).collect();
        let rep = ode_certify(&problem(true, -2.0, 1.0), &[2.0], 5.0, 0.01, 0.5, &seeds, 1e-9).unwrap();
        assert!(rep.pass, "{rep:?}");
        let bad = ode_certify(&problem(true, 2.0, 1.0), &[2.0], 2.0, 0.01, 0.5, &seeds, 1e-9).unwrap();
        assert!(!bad.pass);
        assert!(bad.seeds.iter().all(|s| s.worst_margin > 0.0));
    }
}
