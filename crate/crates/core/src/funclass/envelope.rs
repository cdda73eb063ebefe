use serde::{Deserialize, Serialize};

use super::FuncError;
use crate::dsl::Expr;
use crate::scalar::{derivative, Dual, Scalar};

/// Safety factor applied to numerically sampled derivative bounds.
pub const DERIV_SAFETY: f64 = 1.05;

const DERIV_GRID: usize = 64;

/// Piecewise-linear nondecreasing function on strictly increasing nodes.
///
/// Constant left of the first node, extended by the last slope right of the
/// last node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    s: Vec<f64>,
    v: Vec<f64>,
}

impl PiecewiseLinear {
    /// Running-maximum interpolant of arbitrary (finite, nonnegative) data.
    pub(crate) fn running_max(nodes: &[(f64, f64)]) -> Result<Self, FuncError> {
        if nodes.is_empty() {
            return Err(FuncError::EmptyNodes);
        }
        let mut s = Vec::with_capacity(nodes.len());
        let mut v = Vec::with_capacity(nodes.len());
        let mut best = f64::NEG_INFINITY;
        for (i, &(si, vi)) in nodes.iter().enumerate() {
            if !si.is_finite() || !vi.is_finite() {
                return Err(FuncError::NonFinite { index: i });
            }
            if let Some(&prev) = s.last() {
                if si <= prev {
                    return Err(FuncError::NotIncreasing { index: i });
                }
            }
            best = best.max(vi);
            s.push(si);
            v.push(best);
        }
        Ok(Self { s, v })
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().copied().zip(self.v.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn last_node(&self) -> f64 {
        *self.s.last().expect("nonempty")
    }

    fn slope(&self, k: usize) -> f64 {
        (self.v[k + 1] - self.v[k]) / (self.s[k + 1] - self.s[k])
    }

    fn last_slope(&self) -> f64 {
        let n = self.s.len();
        if n < 2 {
            0.0
        } else {
            self.slope(n - 2)
        }
    }

    /// Index of the segment containing `x` (left-closed), clamped to the table.
    fn segment(&self, x: f64) -> usize {
        let n = self.s.len();
        if n < 2 || x <= self.s[0] {
            return 0;
        }
        match self.s.partition_point(|&si| si <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    pub fn eval<S: Scalar>(&self, x: &S) -> S {
        let xv = x.value();
        let n = self.s.len();
        if n == 1 || xv <= self.s[0] {
            return S::from_f64(self.v[0]);
        }
        if xv >= self.s[n - 1] {
            let slope = self.last_slope();
            return S::from_f64(self.v[n - 1]) + (x.clone() - S::from_f64(self.s[n - 1])).scale(slope);
        }
        let k = self.segment(xv);
        S::from_f64(self.v[k]) + (x.clone() - S::from_f64(self.s[k])).scale(self.slope(k))
    }

    /// Running maximum of the slopes of every segment that meets `[.., x]`.
    pub fn deriv_sup(&self, x: f64) -> f64 {
        let n = self.s.len();
        if n < 2 || x < self.s[0] {
            return 0.0;
        }
        let last = if x >= self.s[n - 1] { n - 2 } else { self.segment(x) };
        (0..=last).map(|k| self.slope(k)).fold(0.0, f64::max)
    }
}

/// Positive nondecreasing scalar function on `[0, ∞)` carrying a
/// nondecreasing bound on its derivative.
///
/// Built from closed forms and combinators so that derivative bounds stay
/// exact through composition: for nonnegative nondecreasing pieces,
/// `sup_{[0,s]} (f∘g)' ≤ f'(g(s))·g'(s)` and the product rule bounds likewise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum MonotoneEnvelope {
    Const { value: f64 },
    /// `Σ c_k s^k` with `c_k ≥ 0`.
    Poly { coeffs: Vec<f64> },
    /// `scale · exp(rate · s)`.
    Exp { scale: f64, rate: f64 },
    Table { table: PiecewiseLinear },
    /// Expression in the variable `s` with a sampled derivative bound.
    Expr { expr: Expr, deriv: PiecewiseLinear },
    Sum { terms: Vec<MonotoneEnvelope> },
    Product { factors: Vec<MonotoneEnvelope> },
    Scale { factor: f64, inner: Box<MonotoneEnvelope> },
    Compose { outer: Box<MonotoneEnvelope>, inner: Box<MonotoneEnvelope> },
    /// The derivative bound of `inner`, itself used as a function.
    DerivSup { inner: Box<MonotoneEnvelope> },
    /// `max(f, 1)`.
    AtLeastOne { inner: Box<MonotoneEnvelope> },
}

impl MonotoneEnvelope {
    pub fn constant(value: f64) -> Self {
        Self::Const { value }
    }

    pub fn poly(coeffs: Vec<f64>) -> Result<Self, FuncError> {
        if coeffs.is_empty() {
            return Err(FuncError::EmptyNodes);
        }
        if let Some(i) = coeffs.iter().position(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(FuncError::NegativeCoefficient { index: i });
        }
        Ok(Self::Poly { coeffs })
    }

    pub fn affine(c0: f64, c1: f64) -> Result<Self, FuncError> {
        Self::poly(vec![c0, c1])
    }

    pub fn exp(scale: f64, rate: f64) -> Result<Self, FuncError> {
        if !(scale >= 0.0 && rate >= 0.0) {
            return Err(FuncError::NegativeCoefficient { index: 0 });
        }
        Ok(Self::Exp { scale, rate })
    }

    pub fn identity() -> Self {
        Self::Poly { coeffs: vec![0.0, 1.0] }
    }

    pub fn linear(c: f64) -> Self {
        Self::Poly { coeffs: vec![0.0, c] }
    }

    pub fn sum(terms: Vec<MonotoneEnvelope>) -> Self {
        Self::Sum { terms }
    }

    pub fn product(factors: Vec<MonotoneEnvelope>) -> Self {
        Self::Product { factors }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::Scale { factor, inner: Box::new(self) }
    }

    /// `self(inner(s))`.
    pub fn compose(self, inner: MonotoneEnvelope) -> Self {
        Self::Compose { outer: Box::new(self), inner: Box::new(inner) }
    }

    /// `self(c·s)`.
    pub fn arg_scaled(self, c: f64) -> Self {
        self.compose(Self::linear(c))
    }

    pub fn at_least_one(self) -> Self {
        Self::AtLeastOne { inner: Box::new(self) }
    }

    /// Envelope given by an expression in `s`; `r` is substituted, and the
    /// derivative bound is sampled on `[0, s_max]` and extended linearly.
    pub fn from_expr(expr: &Expr, r: f64, s_max: f64, grid_n: usize) -> Result<Self, FuncError> {
        let expr = expr.substitute_r(r);
        if !expr.is_univariate_in_s() {
            return Err(FuncError::NotUnivariate(expr.to_string()));
        }
        let grid_n = grid_n.max(2);
        for k in 0..=grid_n {
            let s = s_max * k as f64 / grid_n as f64;
            let v = expr.eval_scalar(&s, r).map_err(|_| FuncError::NonFinite { index: k })?;
            if !(v > 0.0) {
                return Err(FuncError::NonPositive { index: k });
            }
        }
        let deriv = deriv_table(|s| expr.eval_in_s(&s), s_max, grid_n)?;
        Ok(Self::Expr { expr, deriv })
    }

    pub fn table(table: PiecewiseLinear) -> Self {
        Self::Table { table }
    }

    pub fn eval<S: Scalar>(&self, s: &S) -> S {
        match self {
            Self::Const { value } => S::from_f64(*value),
            Self::Poly { coeffs } => {
                let mut acc = S::from_f64(*coeffs.last().expect("nonempty"));
                for c in coeffs.iter().rev().skip(1) {
                    acc = acc * s.clone() + S::from_f64(*c);
                }
                acc
            }
            Self::Exp { scale, rate } => s.scale(*rate).exp().scale(*scale),
            Self::Table { table } => table.eval(s),
            Self::Expr { expr, .. } => expr.eval_in_s(s),
            Self::Sum { terms } => terms
                .iter()
                .map(|t| t.eval(s))
                .fold(S::from_f64(0.0), |a, b| a + b),
            Self::Product { factors } => factors
                .iter()
                .map(|t| t.eval(s))
                .fold(S::from_f64(1.0), |a, b| a * b),
            Self::Scale { factor, inner } => inner.eval(s).scale(*factor),
            Self::Compose { outer, inner } => outer.eval(&inner.eval(s)),
            Self::DerivSup { inner } => inner.deriv_eval(s),
            Self::AtLeastOne { inner } => {
                let v = inner.eval(s);
                if v.value() < 1.0 {
                    S::from_f64(1.0)
                } else {
                    v
                }
            }
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(&s)
    }

    /// Nondecreasing upper bound of `sup_{[0,s]} |d eval/ds|`.
    pub fn deriv_sup(&self, s: f64) -> f64 {
        self.deriv_eval(&s.max(0.0))
    }

    /// [`Self::deriv_sup`] as a differentiable expression in `s >= 0`.
    pub fn deriv_eval<S: Scalar>(&self, s: &S) -> S {
        match self {
            Self::Const { .. } => S::from_f64(0.0),
            Self::Poly { coeffs } => {
                let mut acc = S::from_f64(0.0);
                for (k, c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * s.clone() + S::from_f64(k as f64 * c);
                }
                acc
            }
            Self::Exp { scale, rate } => s.scale(*rate).exp().scale(scale * rate),
            Self::Table { table } => S::from_f64(table.deriv_sup(s.value())),
            Self::Expr { deriv, .. } => deriv.eval(s),
            Self::DerivSup { inner } => {
                let x = s.value().max(0.0);
                let peak = (0..=DERIV_GRID)
                    .map(|k| {
                        let y = x * k as f64 / DERIV_GRID as f64;
                        derivative(|d| inner.deriv_eval(&d), y).abs()
                    })
                    .fold(0.0, f64::max);
                S::from_f64(DERIV_SAFETY * peak)
            }
            Self::Sum { terms } => terms
                .iter()
                .map(|t| t.deriv_eval(s))
                .fold(S::from_f64(0.0), |a, b| a + b),
            Self::Product { factors } => {
                let vals: Vec<S> = factors.iter().map(|f| f.eval(s).abs()).collect();
                let mut acc = S::from_f64(0.0);
                for (i, f) in factors.iter().enumerate() {
                    let others = vals
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .fold(S::from_f64(1.0), |a, (_, v)| a * v.clone());
                    acc = acc + f.deriv_eval(s) * others;
                }
                acc
            }
            Self::Scale { factor, inner } => inner.deriv_eval(s).scale(factor.abs()),
            Self::Compose { outer, inner } => outer.deriv_eval(&inner.eval(s)) * inner.deriv_eval(s),
            Self::AtLeastOne { inner } => inner.deriv_eval(s),
        }
    }

    /// `s ↦ deriv_sup(s)` as an envelope of its own.
    pub fn derivative_bound(self) -> Self {
        Self::DerivSup { inner: Box::new(self) }
    }

    /// Sampled `(s, value)` table for export.
    pub fn sample(&self, grid: &[f64]) -> Vec<(f64, f64)> {
        grid.iter().map(|&s| (s, self.value(s))).collect()
    }

    /// Sampled check of the three structural invariants; returns the first
    /// offending grid point.
    pub fn check_invariants(&self, grid: &[f64], require_positive: bool) -> Result<(), FuncError> {
        let vals: Vec<f64> = grid.iter().map(|&s| self.value(s)).collect();
        for (i, (&s, &v)) in grid.iter().zip(&vals).enumerate() {
            if !v.is_finite() || (require_positive && v <= 0.0) {
                return Err(FuncError::InvariantViolated { s, what: "positivity" });
            }
            if i > 0 {
                let (s0, v0) = (grid[i - 1], vals[i - 1]);
                if v < v0 - 1e-12 * v0.abs().max(1.0) {
                    return Err(FuncError::InvariantViolated { s, what: "monotonicity" });
                }
                let slack = 1e-12 * v.abs().max(1.0);
                if v - v0 > (s - s0) * self.deriv_sup(s) + slack {
                    return Err(FuncError::InvariantViolated { s, what: "derivative bound" });
                }
            }
        }
        Ok(())
    }
}

/// Monotone piecewise-linear envelope of the running maximum of `nodes`.
pub fn envelope_from_samples(nodes: &[(f64, f64)]) -> Result<MonotoneEnvelope, FuncError> {
    if let Some(i) = nodes.iter().position(|&(_, v)| !(v > 0.0)) {
        return Err(FuncError::NonPositive { index: i });
    }
    Ok(MonotoneEnvelope::table(PiecewiseLinear::running_max(nodes)?))
}

/// Running maximum of the forward-mode derivative of `f` on a uniform grid
/// over `[0, s_max]`, inflated by [`DERIV_SAFETY`]. The result may be zero.
pub fn deriv_sup_numeric(
    f: impl Fn(Dual) -> Dual,
    s_max: f64,
    grid_n: usize,
) -> Result<MonotoneEnvelope, FuncError> {
    Ok(MonotoneEnvelope::table(deriv_table(f, s_max, grid_n)?))
}

pub(crate) fn deriv_table(
    f: impl Fn(Dual) -> Dual,
    s_max: f64,
    grid_n: usize,
) -> Result<PiecewiseLinear, FuncError> {
    let grid_n = grid_n.max(1);
    let mut nodes = Vec::with_capacity(grid_n + 1);
    for k in 0..=grid_n {
        let s = s_max * k as f64 / grid_n as f64;
        let d = derivative(&f, s);
        if !d.is_finite() {
            return Err(FuncError::NonFiniteDerivative { s });
        }
        nodes.push((s, d.max(0.0) * DERIV_SAFETY));
    }
    PiecewiseLinear::running_max(&nodes)
}
