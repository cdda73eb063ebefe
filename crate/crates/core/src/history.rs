//! r-histories: sampled functions on `[-r, 0]` with values in `ℜⁿ`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Default number of grid intervals per window.
pub const DEFAULT_M: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error("delay must be positive, got {0}")]
    BadDelay(f64),
    #[error("need at least 2 grid intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("expected {expected} values, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite sample at grid index {index}")]
    NonFinite { index: usize },
    #[error("shift h = {h} must satisfy 0 <= h < r = {r}")]
    ShiftOutOfRange { h: f64, r: f64 },
    #[error("delay {tau} outside [0, {r}]")]
    DelayOutOfRange { tau: f64, r: f64 },
    #[error("component {index} outside 0..{dim}")]
    ComponentOutOfRange { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interp {
    #[default]
    Linear,
    CubicHermite,
}

/// Values on the uniform grid `θ_k = -r + k·r/m`, `k = 0..=m`, stored row-major.
///
/// Cubic-Hermite segments also carry `dx/dθ` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment<T: Real> {
    r: T,
    dim: usize,
    m: usize,
    samples: Vec<T>,
    slopes: Option<Vec<T>>,
}

impl<T: Real> HistorySegment<T> {
    /// Linear-interpolation segment from `m + 1` rows of length `dim`.
    pub fn new(r: T, dim: usize, samples: Vec<T>) -> Result<Self, HistoryError> {
        Self::build(r, dim, samples, None)
    }

    /// Cubic-Hermite segment; `slopes` holds `dx/dθ` per node.
    pub fn hermite(r: T, dim: usize, samples: Vec<T>, slopes: Vec<T>) -> Result<Self, HistoryError> {
        if slopes.len() != samples.len() {
            return Err(HistoryError::DimMismatch { expected: samples.len(), got: slopes.len() });
        }
        Self::build(r, dim, samples, Some(slopes))
    }

    fn build(r: T, dim: usize, samples: Vec<T>, slopes: Option<Vec<T>>) -> Result<Self, HistoryError> {
        if !(r > T::zero()) || !r.is_finite() {
            return Err(HistoryError::BadDelay(r.as_f64()));
        }
        let dim = dim.max(1);
        if !samples.len().is_multiple_of(dim) {
            return Err(HistoryError::DimMismatch {
                expected: (samples.len() / dim + 1) * dim,
                got: samples.len(),
            });
        }
        let rows = samples.len() / dim;
        if rows < 3 {
            return Err(HistoryError::TooFewIntervals(rows.saturating_sub(1)));
        }
        let bad = samples
            .iter()
            .chain(slopes.iter().flatten())
            .position(|v| !v.is_finite());
        if let Some(i) = bad {
            return Err(HistoryError::NonFinite { index: (i % samples.len()) / dim });
        }
        Ok(Self { r, dim, m: rows - 1, samples, slopes })
    }

    /// Samples `f(θ_k)` on `m` intervals.
    pub fn from_fn(r: T, m: usize, dim: usize, f: impl Fn(T) -> Vec<T>) -> Result<Self, HistoryError> {
        if m < 2 {
            return Err(HistoryError::TooFewIntervals(m));
        }
        let mut samples = Vec::with_capacity((m + 1) * dim);
        for k in 0..=m {
            let row = f(grid_theta(r, m, k));
            if row.len() != dim {
                return Err(HistoryError::DimMismatch { expected: dim, got: row.len() });
            }
            samples.extend(row);
        }
        Self::new(r, dim, samples)
    }

    pub fn constant(r: T, m: usize, value: &[T]) -> Result<Self, HistoryError> {
        Self::from_fn(r, m, value.len(), |_| value.to_vec())
    }

    pub fn zeros(r: T, m: usize, dim: usize) -> Result<Self, HistoryError> {
        Self::constant(r, m, &vec![T::zero(); dim])
    }

    pub fn r(&self) -> T {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid intervals.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn interp(&self) -> Interp {
        if self.slopes.is_some() {
            Interp::CubicHermite
        } else {
            Interp::Linear
        }
    }

    pub fn dtheta(&self) -> T {
        self.r / T::lit(self.m as f64)
    }

    pub fn theta(&self, k: usize) -> T {
        grid_theta(self.r, self.m, k)
    }

    pub fn sample(&self, k: usize) -> &[T] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    /// `x(0)`.
    pub fn newest(&self) -> &[T] {
        self.sample(self.m)
    }

    /// `x(-r)`.
    pub fn oldest(&self) -> &[T] {
        self.sample(0)
    }

    /// Copy with the linear interpolation rule.
    pub fn to_linear(&self) -> Self {
        Self { slopes: None, ..self.clone() }
    }

    /// Interpolant at `θ ∈ [-r, 0]` (clamped), written into `out`.
    pub fn eval_into(&self, theta: T, out: &mut [T]) {
        let u = ((theta + self.r) / self.dtheta()).max(T::zero());
        let m = T::lit(self.m as f64);
        if u >= m {
            out.copy_from_slice(self.newest());
            return;
        }
        let nearest = u.round();
        if (u - nearest).abs() <= T::lit(1e-9) {
            out.copy_from_slice(self.sample(nearest.to_usize().unwrap_or(0).min(self.m)));
            return;
        }
        let k = u.floor().to_usize().unwrap_or(0).min(self.m - 1);
        let t = u - T::lit(k as f64);
        let (a, b) = (self.sample(k), self.sample(k + 1));
        match &self.slopes {
            None => {
                for i in 0..self.dim {
                    out[i] = a[i] + t * (b[i] - a[i]);
                }
            }
            Some(d) => {
                let h = self.dtheta();
                let (da, db) = (&d[k * self.dim..], &d[(k + 1) * self.dim..]);
                let one = T::one();
                let two = T::lit(2.0);
                let three = T::lit(3.0);
                let t2 = t * t;
                let t3 = t2 * t;
                let h00 = two * t3 - three * t2 + one;
                let h10 = t3 - two * t2 + t;
                let h01 = three * t2 - two * t3;
                let h11 = t3 - t2;
                for i in 0..self.dim {
                    out[i] = h00 * a[i] + h10 * h * da[i] + h01 * b[i] + h11 * h * db[i];
                }
            }
        }
    }

    pub fn eval(&self, theta: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.eval_into(theta, &mut out);
        out
    }

    /// Nodes of a piecewise-linear path that represents the interpolant:
    /// the grid itself for linear segments, a 4× refinement for Hermite ones.
    pub fn path(&self) -> Vec<(T, Vec<T>)> {
        let refine = if self.slopes.is_some() { 4 } else { 1 };
        let n = self.m * refine;
        let step = self.r / T::lit(n as f64);
        (0..=n)
            .map(|j| {
                if j % refine == 0 {
                    (self.theta(j / refine), self.sample(j / refine).to_vec())
                } else {
                    let th = -self.r + step * T::lit(j as f64);
                    (th, self.eval(th))
                }
            })
            .collect()
    }

    /// `‖x‖_r`, maximized over the interpolation path nodes.
    pub fn sup_norm(&self) -> T {
        self.path()
            .iter()
            .map(|(_, v)| norm(v))
            .fold(T::zero(), T::max)
    }

    /// `x(-τ)`.
    pub fn at_delay(&self, tau: T) -> Result<Vec<T>, HistoryError> {
        if !(tau >= T::zero() && tau <= self.r) {
            return Err(HistoryError::DelayOutOfRange { tau: tau.as_f64(), r: self.r.as_f64() });
        }
        Ok(self.eval(-tau))
    }

    /// Exact breakpoints of `E_h(x; v)` for the linear interpolant.
    pub fn shift_path(&self, v: &[T], h: T) -> Result<Vec<(T, Vec<T>)>, HistoryError> {
        self.check_shift(v, h)?;
        let mut nodes = Vec::with_capacity(self.m + 2);
        if h == T::zero() {
            return Ok(self.path());
        }
        nodes.push((-self.r, self.eval(-self.r + h)));
        for (th, x) in self.path() {
            let s = th - h;
            if s > -self.r {
                nodes.push((s, x));
            }
        }
        let tip: Vec<T> = self.newest().iter().zip(v).map(|(&a, &b)| a + h * b).collect();
        nodes.push((T::zero(), tip));
        Ok(nodes)
    }

    /// `E_h(x; v)` resampled on the same grid with linear interpolation.
    pub fn shift_eh(&self, v: &[T], h: T) -> Result<Self, HistoryError> {
        self.check_shift(v, h)?;
        if h == T::zero() {
            return Ok(self.clone());
        }
        let x0 = self.newest().to_vec();
        Self::from_fn(self.r, self.m, self.dim, |th| {
            if th > -h {
                x0.iter().zip(v).map(|(&a, &b)| a + (th + h) * b).collect()
            } else {
                self.eval(th + h)
            }
        })
    }

    fn check_shift(&self, v: &[T], h: T) -> Result<(), HistoryError> {
        if v.len() != self.dim {
            return Err(HistoryError::DimMismatch { expected: self.dim, got: v.len() });
        }
        if !(h >= T::zero() && h < self.r) {
            return Err(HistoryError::ShiftOutOfRange { h: h.as_f64(), r: self.r.as_f64() });
        }
        Ok(())
    }

    /// Composite trapezoid of `f(x_component(θ))` over the sample grid.
    pub fn window_integral(&self, component: usize, f: impl Fn(T) -> T) -> Result<T, HistoryError> {
        if component >= self.dim {
            return Err(HistoryError::ComponentOutOfRange { index: component, dim: self.dim });
        }
        let vals: Vec<T> = (0..=self.m).map(|k| f(self.sample(k)[component])).collect();
        let inner = vals[1..self.m].iter().fold(T::zero(), |a, &b| a + b);
        let half = T::lit(0.5);
        Ok(self.dtheta() * (inner + half * (vals[0] + vals[self.m])))
    }

    /// Sup norm of a single component.
    pub fn component_sup(&self, component: usize) -> Result<T, HistoryError> {
        if component >= self.dim {
            return Err(HistoryError::ComponentOutOfRange { index: component, dim: self.dim });
        }
        Ok(self
            .path()
            .iter()
            .map(|(_, v)| v[component].abs())
            .fold(T::zero(), T::max))
    }

    /// Rows `θ, x1..xn` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta");
        for i in 1..=self.dim {
            let _ = write!(s, ",x{i}");
        }
        s.push('\n');
        for k in 0..=self.m {
            let _ = write!(s, "{}", fmt17(self.theta(k).as_f64()));
            for v in self.sample(k) {
                let _ = write!(s, ",{}", fmt17(v.as_f64()));
            }
            s.push('\n');
        }
        s
    }
}

fn grid_theta<T: Real>(r: T, m: usize, k: usize) -> T {
    if k == m {
        T::zero()
    } else {
        -r + r * T::lit(k as f64) / T::lit(m as f64)
    }
}

/// Euclidean norm.
pub fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a + b * b).sqrt()
}

/// Decimal with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
