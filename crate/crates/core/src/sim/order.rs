use serde::Serialize;

use super::{integrate_with, DisturbanceSignal, GeneralRfdeSpec, IntegrateOptions, Scheme};
use crate::history::HistorySegment;

/// Reference problems with known solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrderProblem {
    /// `ẋ = -x`, `x(0) = 1`, on `[0, 1]`.
    DelayFreeDecay,
    /// `ẋ(t) = -x(t-1)`, `x ≡ 1` on `[-1, 0]`, on `[0, horizon]`.
    DelayedDecay { horizon: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub problem: OrderProblem,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})` for successive halvings.
    pub ratios: Vec<f64>,
    /// Last ratio not polluted by roundoff.
    pub observed: f64,
    /// True when the finest errors sit at the roundoff floor.
    pub saturated: bool,
}

impl OrderProblem {
    fn horizon(self) -> f64 {
        match self {
            OrderProblem::DelayFreeDecay => 1.0,
            OrderProblem::DelayedDecay { horizon } => horizon as f64,
        }
    }

    pub fn exact(self) -> f64 {
        match self {
            OrderProblem::DelayFreeDecay => (-1.0f64).exp(),
            OrderProblem::DelayedDecay { horizon } => delayed_decay_exact(horizon),
        }
    }

    fn spec(self) -> GeneralRfdeSpec<f64> {
        match self {
            OrderProblem::DelayFreeDecay => GeneralRfdeSpec::new(1, 1.0, |_, _, x, _, out| {
                out[0] = -x.newest()[0];
                Ok(())
            }),
            OrderProblem::DelayedDecay { .. } => GeneralRfdeSpec::new(1, 1.0, |_, _, x, _, out| {
                out[0] = -x.oldest()[0];
                Ok(())
            }),
        }
    }
}

/// Method of steps in exact polynomial form: on `[k-1, k]` the solution is a
/// polynomial in the local variable `τ = t - (k-1) ∈ [0, 1]`.
fn delayed_decay_exact(horizon: u32) -> f64 {
    let mut p = vec![1.0];
    for _ in 0..horizon {
        let end: f64 = p.iter().sum();
        let mut next = vec![end];
        next.extend(p.iter().enumerate().map(|(i, c)| -c / (i + 1) as f64));
        p = next;
    }
    p.iter().sum()
}

/// Runs the problem at `dt = 1/8, 1/16, …` (`halvings + 1` runs) with RK4.
pub fn order_check(problem: OrderProblem, halvings: usize) -> OrderReport {
    order_check_from(problem, halvings, 1.0 / 8.0)
}

/// As [`order_check`], starting from `dt0` (must divide 1).
pub fn order_check_from(problem: OrderProblem, halvings: usize, dt0: f64) -> OrderReport {
    let spec = problem.spec();
    let exact = problem.exact();
    let mut dts = Vec::new();
    let mut errors = Vec::new();
    for k in 0..=halvings {
        let dt = dt0 / f64::powi(2.0, k as i32);
        let m = (1.0 / dt).round().max(2.0) as usize;
        let x0 = HistorySegment::constant(1.0, m, &[1.0]).expect("valid grid");
        let d = DisturbanceSignal::zero(0, dt);
        let tr = integrate_with(&spec, &x0, &d, |_, _| vec![], 0.0, problem.horizon(), dt, IntegrateOptions::with_scheme(Scheme::Rk4))
            .expect("compatible grid");
        dts.push(dt);
        errors.push((tr.final_state()[0] - exact).abs());
    }
    let floor = 1e-13 * exact.abs().max(1.0);
    let ratios: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let usable = errors.iter().take_while(|&&e| e > floor).count();
    let saturated = usable < errors.len();
    let observed = if usable >= 2 { ratios[usable - 2] } else { f64::NAN };
    OrderReport { problem, dts, errors, ratios, observed, saturated }
}
