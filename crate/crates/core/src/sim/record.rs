use std::fmt::Write as _;

use crate::history::{fmt17, HistorySegment, Interp};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum Status<T> {
    Completed,
    BlowUp { t: T },
    StepFailure { t: T, reason: String },
}

impl<T> Status<T> {
    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::BlowUp { .. } => "blow-up",
            Status::StepFailure { .. } => "step-failure",
        }
    }
}

/// Node values and derivatives on the uniform step grid, preceded by the
/// initial history.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense<T: Real> {
    pub initial: HistorySegment<T>,
    pub t0: T,
    pub dt: T,
    pub interp: Interp,
    pub states: Vec<Vec<T>>,
    pub slopes: Vec<Vec<T>>,
}

impl<T: Real> Dense<T> {
    /// State at `t ≤ t0 + (len-1)·dt`, written into `out`.
    pub fn eval_into(&self, t: T, out: &mut [T]) {
        let rel = t - self.t0;
        if rel <= T::zero() {
            self.initial.eval_into(rel, out);
            return;
        }
        let u = rel / self.dt;
        let nearest = u.round();
        let last = self.states.len() - 1;
        if (u - nearest).abs() <= T::lit(1e-9) {
            let k = nearest.to_usize().unwrap_or(0).min(last);
            out.copy_from_slice(&self.states[k]);
            return;
        }
        let k = u.floor().to_usize().unwrap_or(0).min(last.saturating_sub(1));
        let s = u - T::lit(k as f64);
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        match self.interp {
            Interp::Linear => {
                for i in 0..out.len() {
                    out[i] = a[i] + s * (b[i] - a[i]);
                }
            }
            Interp::CubicHermite => {
                let (da, db) = (&self.slopes[k], &self.slopes[k + 1]);
                let one = T::one();
                let two = T::lit(2.0);
                let three = T::lit(3.0);
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = two * s3 - three * s2 + one;
                let h10 = s3 - two * s2 + s;
                let h01 = three * s2 - two * s3;
                let h11 = s3 - s2;
                let h = self.dt;
                for i in 0..out.len() {
                    out[i] = h00 * a[i] + h10 * h * da[i] + h01 * b[i] + h11 * h * db[i];
                }
            }
        }
    }
}

/// Sampled closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub controls: Vec<Vec<T>>,
    pub disturbances: Vec<Vec<T>>,
    pub status: Status<T>,
    pub(crate) dense: Dense<T>,
    pub(crate) m: usize,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> T {
        self.dense.dt
    }

    pub fn r(&self) -> T {
        self.dense.initial.r()
    }

    pub fn dim(&self) -> usize {
        self.dense.initial.dim()
    }

    pub fn initial(&self) -> &HistorySegment<T> {
        &self.dense.initial
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("nonempty")
    }

    /// Dense-output state at time `t` within the recorded range.
    pub fn state_at(&self, t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.dense.eval_into(t, &mut out);
        out
    }

    /// `T_r(t_k)x` rebuilt from dense output on the history grid.
    pub fn window(&self, k: usize) -> HistorySegment<T> {
        let t = self.times[k];
        let (r, m) = (self.r(), self.m);
        if k == 0 {
            return self.dense.initial.clone();
        }
        let dim = self.dim();
        let mut samples = vec![T::zero(); (m + 1) * dim];
        for j in 0..=m {
            let th = if j == m { T::zero() } else { -r + r * T::lit(j as f64) / T::lit(m as f64) };
            self.dense.eval_into(t + th, &mut samples[j * dim..(j + 1) * dim]);
        }
        HistorySegment::new(r, dim, samples).expect("finite recorded states")
    }

    /// Columns `t, x1..xn, u1.., d1.., [V]`, 17 significant digits.
    pub fn to_csv(&self, v: Option<&[T]>) -> String {
        let mut s = String::from("t");
        for i in 1..=self.dim() {
            let _ = write!(s, ",x{i}");
        }
        let nu = self.controls.first().map_or(0, Vec::len);
        let nd = self.disturbances.first().map_or(0, Vec::len);
        for i in 1..=nu {
            let _ = write!(s, ",u{i}");
        }
        for i in 1..=nd {
            let _ = write!(s, ",d{i}");
        }
        if v.is_some() {
            s.push_str(",V");
        }
        s.push('\n');
        for k in 0..self.len() {
            let _ = write!(s, "{}", fmt17(self.times[k].as_f64()));
            let cols = self.states[k].iter().chain(&self.controls[k]).chain(&self.disturbances[k]);
            for c in cols {
                let _ = write!(s, ",{}", fmt17(c.as_f64()));
            }
            if let Some(v) = v {
                let _ = write!(s, ",{}", fmt17(v[k].as_f64()));
            }
            s.push('\n');
        }
        s
    }
}
