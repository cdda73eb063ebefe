use std::fmt;
use std::sync::Arc;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClassKind {
    K,
    KInf,
    KPlus,
    E,
    PositiveDefinite,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::K => "K",
            ClassKind::KInf => "K∞",
            ClassKind::KPlus => "K⁺",
            ClassKind::E => "E",
            ClassKind::PositiveDefinite => "positive-definite",
        })
    }
}

#[derive(Clone)]
pub struct ClassFunction {
    pub kind: ClassKind,
    pub handle: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ClassFunction {
    pub fn new(kind: ClassKind, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { kind, handle: Arc::new(f) }
    }
}

impl fmt::Debug for ClassFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassFunction").field("kind", &self.kind).finish_non_exhaustive()
    }
}

/// Uniform grid `s_k = s_max·k/n`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingPlan {
    pub s_max: f64,
    pub n: usize,
}

impl SamplingPlan {
    pub fn new(s_max: f64, n: usize) -> Self {
        Self { s_max, n: n.max(2) }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |k| self.s_max * k as f64 / self.n as f64)
    }
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self::new(50.0, 5000)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub kind: ClassKind,
    pub pass: bool,
    /// `(s, f(s))` at the first failing sample.
    pub first_violation: Option<(f64, f64)>,
    pub note: String,
}

const ZERO_TOL: f64 = 1e-12;

/// Sampled membership check. Passing means "consistent with the class on the
/// grid", never a proof.
pub fn check_class(f: &ClassFunction, plan: &SamplingPlan) -> ClassReport {
    let pts: Vec<(f64, f64)> = plan.points().map(|s| (s, (f.handle)(s))).collect();
    let violation = match f.kind {
        ClassKind::K | ClassKind::KInf => zero_at_zero(&pts).or_else(|| strictly_increasing(&pts)),
        ClassKind::PositiveDefinite => zero_at_zero(&pts)
            .or_else(|| pts.iter().skip(1).find(|(_, v)| !(*v > 0.0)).copied()),
        ClassKind::KPlus => pts.iter().find(|(_, v)| !(*v > 0.0)).copied(),
        ClassKind::E => vanishing_tail(&pts),
    };
    let extra = match f.kind {
        ClassKind::KInf => "; unboundedness is not decidable on a finite grid",
        _ => "",
    };
    ClassReport {
        kind: f.kind,
        pass: violation.is_none(),
        first_violation: violation,
        note: format!(
            "consistent with class {} on grid [0, {}] with {} intervals: {}{}",
            f.kind,
            plan.s_max,
            plan.n,
            violation.is_none(),
            extra
        ),
    }
}

fn zero_at_zero(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let (s0, v0) = pts[0];
    (!(v0.abs() <= ZERO_TOL)).then_some((s0, v0))
}

fn strictly_increasing(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    pts.windows(2).find(|w| !(w[1].1 > w[0].1)).map(|w| w[1])
}

fn vanishing_tail(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if let Some(p) = pts.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
        return Some(*p);
    }
    let half = pts.len() / 2;
    if let Some(w) = pts[half..].windows(2).find(|w| w[1].1 > w[0].1) {
        return Some(w[1]);
    }
    let integral: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    let peak = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let last = *pts.last().expect("nonempty");
    if !integral.is_finite() || last.1 > 1e-3 * peak.max(ZERO_TOL) {
        return Some(last);
    }
    None
}
