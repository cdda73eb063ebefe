use serde::Serialize;

use super::{SynthError, SynthesisResult};
use crate::history::HistorySegment;
use crate::lyapunov::MaxTypeFunctional;
use crate::qmc::halton_box;
use crate::scalar::{Dual, Scalar};

/// `(LHS, RHS)` of the stage-`i` dissipation inequality at `ξ`:
///
/// ```text
/// LHS = -ξ1² b1 μ1 + s|ξ1|γ1 + Σ_{j=2..i} [ -z_j² b_j μ_j + s|z_j| γ_j + s|z_j| (Σ_{k<j} γ_k) δ_{j-1} ]
/// RHS = -(n + 1 - i) σ (ξ1² + Σ z_j²),   s = |ξ1| + Σ |z_j|
/// ```
pub fn master_margin(res: &SynthesisResult, i: usize, xi: &[f64]) -> (f64, f64) {
    let x: Vec<Dual> = xi[..i].iter().map(|&v| Dual::constant(v)).collect();
    let ch = res.chain(i, &x, false);
    let z: Vec<f64> = ch.z.iter().map(Scalar::value).collect();
    let mu: Vec<f64> = ch.mu.iter().map(Scalar::value).collect();
    let delta: Vec<f64> = ch.delta.iter().map(Scalar::value).collect();
    let s: f64 = z.iter().map(|v| v.abs()).sum();
    let gamma: Vec<f64> = (1..=i).map(|j| res.gamma(j, s)).collect();
    let mut lhs = 0.0;
    let mut gamma_sum = 0.0;
    for j in 1..=i {
        let zj = z[j - 1];
        lhs += -zj * zj * res.b(j, s) * mu[j - 1] + s * zj.abs() * gamma[j - 1];
        if j >= 2 {
            lhs += s * zj.abs() * gamma_sum * delta[j - 2];
        }
        gamma_sum += gamma[j - 1];
    }
    let q: f64 = z.iter().map(|v| v * v).sum();
    let rhs = -((res.n() + 1 - i) as f64) * res.sigma() * q;
    (lhs, rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterReport {
    pub stage: usize,
    pub samples: usize,
    pub pass: bool,
    /// Largest `LHS - RHS` met.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub worst_rhs: f64,
    /// Points with `LHS - RHS > 1e-9 (1 + |RHS|)`.
    pub violations: usize,
}

/// Samples the stage-`stage` inequality at Halton points of `[lo, hi]^stage`
/// plus the origin.
pub fn verify_master_inequality(res: &SynthesisResult, stage: usize, samples: usize, lo: f64, hi: f64) -> MasterReport {
    let mut pts = halton_box(samples, stage, lo, hi);
    pts.push(vec![0.0; stage]);
    let mut report = MasterReport {
        stage,
        samples: pts.len(),
        pass: true,
        worst_margin: f64::NEG_INFINITY,
        worst_point: vec![],
        worst_rhs: 0.0,
        violations: 0,
    };
    for xi in pts {
        let (lhs, rhs) = master_margin(res, stage, &xi);
        let margin = lhs - rhs;
        if !(margin <= 1e-9 * (1.0 + rhs.abs())) {
            report.violations += 1;
            report.pass = false;
        }
        if margin > report.worst_margin || margin.is_nan() {
            report.worst_margin = margin;
            report.worst_point = xi;
            report.worst_rhs = rhs;
        }
    }
    report
}

/// `V(x) = max_θ e^{2σθ} Q(x(θ))` with `Q = ξ1² + Σ (ξ_j - k_{j-1})²`.
pub fn build_srclf(res: &SynthesisResult) -> MaxTypeFunctional<f64> {
    let (a, b) = (res.clone(), res.clone());
    MaxTypeFunctional::new(res.sigma(), res.r(), move |x: &[f64]| a.q(x), move |x: &[f64]| b.grad_q(x))
}

/// `u = k_n(x(0))`; reads only the newest history sample.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    res: SynthesisResult,
}

impl FeedbackLaw {
    pub fn control(&self, x0: &[f64]) -> Result<f64, SynthError> {
        let n = self.res.n();
        if x0.len() != n {
            return Err(SynthError::Dim { expected: n, got: x0.len() });
        }
        Ok(self.res.k(n, x0))
    }

    pub fn eval(&self, _t: f64, x: &HistorySegment<f64>) -> Result<f64, SynthError> {
        self.control(x.newest())
    }

    /// Simulator callback; yields `NaN` on a dimension mismatch.
    pub fn as_feedback(&self) -> impl Fn(f64, &HistorySegment<f64>) -> Vec<f64> + '_ {
        move |t, x| vec![self.eval(t, x).unwrap_or(f64::NAN)]
    }
}

pub fn feedback_law(res: &SynthesisResult) -> FeedbackLaw {
    FeedbackLaw { res: res.clone() }
}
