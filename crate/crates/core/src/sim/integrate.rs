use super::record::Dense;
use super::{exact_ratio, project, DisturbanceSignal, GeneralRfdeSpec, SimError, Status, TrajectoryRecord, BLOW_UP};
use crate::history::{norm, HistorySegment, Interp};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Classical explicit Runge–Kutta with cubic-Hermite dense history.
    #[default]
    Rk4,
    /// Two-stage L-stable SDIRK (Alexander), linear dense history.
    Sdirk2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub scheme: Scheme,
    /// Newton iteration cap per implicit stage.
    pub newton_max_iter: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { scheme: Scheme::Rk4, newton_max_iter: 200 }
    }
}

impl IntegrateOptions {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }
}

/// Fixed-step RK4 run on `[t0, t_end]`.
pub fn integrate<T: Real>(
    spec: &GeneralRfdeSpec<T>,
    x0: &HistorySegment<T>,
    d: &DisturbanceSignal<T>,
    feedback: impl Fn(T, &HistorySegment<T>) -> Vec<T>,
    t0: T,
    t_end: T,
    dt: T,
) -> Result<TrajectoryRecord<T>, SimError> {
    integrate_with(spec, x0, d, feedback, t0, t_end, dt, IntegrateOptions::default())
}

type StageResult<T> = Result<(Vec<T>, Vec<T>), String>;

struct Stepper<'a, T: Real, F> {
    spec: &'a GeneralRfdeSpec<T>,
    d: &'a DisturbanceSignal<T>,
    feedback: F,
    dense: Dense<T>,
    m: usize,
    dt: T,
}

impl<'a, T: Real, F: Fn(T, &HistorySegment<T>) -> Vec<T>> Stepper<'a, T, F> {
    /// History ending at stage time `ts` with newest value `y`; `tn` is the
    /// last completed node.
    fn stage_history(&self, tn: T, ts: T, y: &[T]) -> HistorySegment<T> {
        let (r, m, dim) = (self.spec.r, self.m, self.spec.dim);
        let xn = self.dense.states.last().expect("nonempty");
        let mut samples = vec![T::zero(); (m + 1) * dim];
        let slack = self.dt * T::lit(1e-9);
        for j in 0..=m {
            let row = &mut samples[j * dim..(j + 1) * dim];
            if j == m {
                row.copy_from_slice(y);
                continue;
            }
            let tau = ts - r + r * T::lit(j as f64) / T::lit(m as f64);
            if tau <= tn + slack || ts <= tn + slack {
                self.dense.eval_into(tau.min(tn), row);
            } else {
                let w = (tau - tn) / (ts - tn);
                for i in 0..dim {
                    row[i] = xn[i] + w * (y[i] - xn[i]);
                }
            }
        }
        HistorySegment::new(r, dim, samples).unwrap_or_else(|_| {
            HistorySegment::zeros(r, m, dim).expect("valid grid")
        })
    }

    /// `(f, u)` at stage time `ts`, state `y`, disturbance of the step at `tn`.
    fn eval(&self, tn: T, ts: T, y: &[T]) -> StageResult<T> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err("non-finite stage state".into());
        }
        let seg = self.stage_history(tn, ts, y);
        let mut u = (self.feedback)(ts, &seg);
        project(&mut u, &self.spec.control_set);
        let d = self.d.at_step(tn, self.dt);
        let mut f = vec![T::zero(); self.spec.dim];
        (self.spec.rhs)(ts, d, &seg, &u, &mut f)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite right-hand side at t = {}", ts.as_f64()));
        }
        Ok((f, u))
    }

    fn rk4(&self, tn: T, xn: &[T], k1: &[T]) -> Result<Vec<T>, String> {
        let (dt, half) = (self.dt, self.dt * T::lit(0.5));
        let axpy = |a: T, k: &[T]| -> Vec<T> { xn.iter().zip(k).map(|(&x, &v)| x + a * v).collect() };
        let (k2, _) = self.eval(tn, tn + half, &axpy(half, k1))?;
        let (k3, _) = self.eval(tn, tn + half, &axpy(half, &k2))?;
        let (k4, _) = self.eval(tn, tn + dt, &axpy(dt, &k3))?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        Ok((0..xn.len())
            .map(|i| xn[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
            .collect())
    }

    fn sdirk2(&self, tn: T, xn: &[T], max_iter: usize) -> Result<Vec<T>, String> {
        let g = T::one() - T::lit(0.5).sqrt();
        let dt = self.dt;
        let base1 = xn.to_vec();
        let y1 = self.newton(tn, tn + g * dt, &base1, g * dt, xn, max_iter)?;
        let (k1, _) = self.eval(tn, tn + g * dt, &y1)?;
        let base2: Vec<T> = xn.iter().zip(&k1).map(|(&x, &k)| x + (T::one() - g) * dt * k).collect();
        self.newton(tn, tn + dt, &base2, g * dt, &y1, max_iter)
    }

    /// Solves `Y = base + a·f(ts, Y)` by damped Newton with the natural
    /// monotonicity test `|J⁻¹ g(y + λΔ)| ≤ (1 - λ/4) |Δ|`, which is
    /// insensitive to the scale of very stiff components.
    fn newton(&self, tn: T, ts: T, base: &[T], a: T, guess: &[T], max_iter: usize) -> Result<Vec<T>, String> {
        let n = base.len();
        let resid = |y: &[T]| -> Result<Vec<T>, String> {
            let (f, _) = self.eval(tn, ts, y)?;
            Ok((0..n).map(|i| y[i] - base[i] - a * f[i]).collect())
        };
        let neg = |v: &[T]| -> Vec<T> { v.iter().map(|&x| -x).collect() };
        let mut y = guess.to_vec();
        let mut gy = resid(&y)?;
        for _ in 0..max_iter {
            let scale = T::one() + norm(&y);
            let mut jac = vec![T::zero(); n * n];
            for j in 0..n {
                let eps = T::lit(1e-7) * y[j].abs().max(T::one());
                let mut yp = y.clone();
                yp[j] = yp[j] + eps;
                let gp = resid(&yp)?;
                for i in 0..n {
                    jac[i * n + j] = (gp[i] - gy[i]) / eps;
                }
            }
            let delta = solve(jac.clone(), neg(&gy), n).ok_or("singular Newton matrix")?;
            let dn = norm(&delta);
            if dn <= T::lit(1e-12) * scale {
                let y_new: Vec<T> = (0..n).map(|i| y[i] + delta[i]).collect();
                return Ok(y_new);
            }
            let mut lambda = T::one();
            loop {
                let trial: Vec<T> = (0..n).map(|i| y[i] + lambda * delta[i]).collect();
                if let Ok(gt) = resid(&trial) {
                    let bar = solve(jac.clone(), neg(&gt), n);
                    if matches!(&bar, Some(b) if norm(b) <= (T::one() - lambda * T::lit(0.25)) * dn) {
                        y = trial;
                        gy = gt;
                        break;
                    }
                }
                lambda = lambda * T::lit(0.5);
                if lambda < T::lit(1e-8) {
                    return Err(format!("Newton damping failed at t = {}", ts.as_f64()));
                }
            }
        }
        Err(format!("Newton did not converge at t = {}", ts.as_f64()))
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n×n` matrix.
fn solve<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().partial_cmp(&a[j * n + c].abs()).unwrap())?;
        if a[p * n + c] == T::zero() || !a[p * n + c].is_finite() {
            return None;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            b.swap(p, c);
        }
        for i in c + 1..n {
            let f = a[i * n + c] / a[c * n + c];
            for k in c..n {
                a[i * n + k] = a[i * n + k] - f * a[c * n + k];
            }
            b[i] = b[i] - f * b[c];
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(b[i], |acc, k| acc - a[i * n + k] * x[k]);
        x[i] = s / a[i * n + i];
    }
    Some(x)
}

/// Fixed-step run with an explicit choice of scheme.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with<T: Real>(
    spec: &GeneralRfdeSpec<T>,
    x0: &HistorySegment<T>,
    d: &DisturbanceSignal<T>,
    feedback: impl Fn(T, &HistorySegment<T>) -> Vec<T>,
    t0: T,
    t_end: T,
    dt: T,
    opts: IntegrateOptions,
) -> Result<TrajectoryRecord<T>, SimError> {
    let r = spec.r;
    let m = exact_ratio(r.as_f64(), dt.as_f64()).ok_or(SimError::Incompatible {
        dt: dt.as_f64(),
        what: "r",
        value: r.as_f64(),
    })?;
    exact_ratio(d.dwell.as_f64(), dt.as_f64()).ok_or(SimError::Incompatible {
        dt: dt.as_f64(),
        what: "dwell",
        value: d.dwell.as_f64(),
    })?;
    if !(t_end > t0) {
        return Err(SimError::EmptyHorizon);
    }
    if x0.dim() != spec.dim {
        return Err(SimError::DimMismatch { expected: spec.dim, got: x0.dim() });
    }
    if (x0.r() - r).abs() > r * T::lit(1e-12) {
        return Err(SimError::Incompatible { dt: x0.r().as_f64(), what: "r (initial history)", value: r.as_f64() });
    }
    if m < 2 {
        return Err(SimError::Incompatible { dt: dt.as_f64(), what: "r/2", value: r.as_f64() });
    }
    let q = ((t_end - t0) / dt).as_f64();
    let steps = if (q - q.round()).abs() <= 1e-9 * q.max(1.0) { q.round() } else { q.ceil() } as usize;

    let interp = match opts.scheme {
        Scheme::Rk4 => Interp::CubicHermite,
        Scheme::Sdirk2 => Interp::Linear,
    };
    let dense = Dense { initial: x0.clone(), t0, dt, interp, states: vec![x0.newest().to_vec()], slopes: Vec::new() };
    let mut st = Stepper { spec, d, feedback, dense, m, dt };
    let mut times = vec![t0];
    let mut controls = Vec::with_capacity(steps + 1);
    let mut disturbances = Vec::with_capacity(steps + 1);
    let mut status = Status::Completed;
    for n in 0..=steps {
        let tn = times[n];
        let xn = st.dense.states[n].clone();
        let (k1, u) = match st.eval(tn, tn, &xn) {
            Ok(v) => v,
            Err(reason) => {
                status = Status::StepFailure { t: tn, reason };
                break;
            }
        };
        st.dense.slopes.push(k1.clone());
        controls.push(u);
        disturbances.push(d.at_step(tn, dt).to_vec());
        if n == steps {
            break;
        }
        let next = match opts.scheme {
            Scheme::Rk4 => st.rk4(tn, &xn, &k1),
            Scheme::Sdirk2 => st.sdirk2(tn, &xn, opts.newton_max_iter),
        };
        let t_next = t0 + dt * T::lit((n + 1) as f64);
        match next {
            Err(reason) => {
                status = Status::StepFailure { t: t_next, reason };
                break;
            }
            Ok(x) if x.iter().any(|v| !v.is_finite()) || norm(&x) > T::lit(BLOW_UP) => {
                status = Status::BlowUp { t: t_next };
                break;
            }
            Ok(x) => {
                st.dense.states.push(x);
                times.push(t_next);
            }
        }
    }
    // keep every column the same length as the time grid
    let len = st.dense.slopes.len().min(times.len());
    times.truncate(len);
    st.dense.states.truncate(len);
    controls.truncate(len);
    disturbances.truncate(len);
    Ok(TrajectoryRecord {
        times,
        states: st.dense.states.clone(),
        controls,
        disturbances,
        status,
        dense: st.dense,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::make_disturbance;

    fn decay(r: f64) -> GeneralRfdeSpec<f64> {
        GeneralRfdeSpec::new(1, r, |_, _, x, _, out| {
            out[0] = -x.newest()[0];
            Ok(())
        })
    }

    fn delayed() -> GeneralRfdeSpec<f64> {
        GeneralRfdeSpec::new(1, 1.0, |_, _, x, _, out| {
            out[0] = -x.oldest()[0];
            Ok(())
        })
    }

    fn no_input(_: f64, _: &HistorySegment<f64>) -> Vec<f64> {
        vec![]
    }

    #[test]
    fn exponential_decay() {
        let x0 = HistorySegment::constant(1.0, 100, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.01);
        let tr = integrate(&decay(1.0), &x0, &d, no_input, 0.0, 1.0, 0.01).unwrap();
        assert!(tr.status.is_completed());
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.len(), 101);
    }

    #[test]
    fn hand_solved_delay_equation() {
        let x0 = HistorySegment::constant(1.0, 128, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 1.0 / 128.0);
        let tr = integrate(&delayed(), &x0, &d, no_input, 0.0, 2.0, 1.0 / 128.0).unwrap();
        assert!((tr.final_state()[0] + 0.5).abs() < 1e-6);
        assert!((tr.state_at(1.0)[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_keeps_newest_sample() {
        let spec = GeneralRfdeSpec::new(2, 1.0, |_, _, _, _, out: &mut [f64]| {
            out.fill(0.0);
            Ok(())
        });
        let x0 = HistorySegment::from_fn(1.0, 8, 2, |t: f64| vec![t.sin() + 1.0, t]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let tr = integrate(&spec, &x0, &d, no_input, 0.0, 3.0, 0.125).unwrap();
        assert!(tr.states.iter().all(|s| s == x0.newest()));
    }

    #[test]
    fn rejects_incompatible_step() {
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.3);
        let err = integrate(&decay(1.0), &x0, &d, no_input, 0.0, 1.0, 0.3).unwrap_err();
        assert!(matches!(err, SimError::Incompatible { what: "r", .. }));
        let d = DisturbanceSignal::zero(0, 0.3);
        let err = integrate(&decay(1.0), &x0, &d, no_input, 0.0, 1.0, 0.25).unwrap_err();
        assert!(matches!(err, SimError::Incompatible { what: "dwell", .. }));
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = GeneralRfdeSpec::new(1, 1.0, |_, _, x: &HistorySegment<f64>, _, out: &mut [f64]| {
            out[0] = x.newest()[0] * x.newest()[0];
            Ok(())
        });
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let tr = integrate(&spec, &x0, &d, no_input, 0.0, 5.0, 0.125).unwrap();
        match tr.status {
            Status::BlowUp { t } => assert!(t > 0.9 && t < 1.2, "{t}"),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn step_failure_on_non_finite_rhs() {
        let spec = GeneralRfdeSpec::new(1, 1.0, |t: f64, _, _, _, out: &mut [f64]| {
            out[0] = if t > 0.5 { f64::NAN } else { 0.0 };
            Ok(())
        });
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let tr = integrate(&spec, &x0, &d, no_input, 0.0, 2.0, 0.125).unwrap();
        assert!(matches!(tr.status, Status::StepFailure { .. }));
        assert_eq!(tr.len(), tr.controls.len());
    }

    #[test]
    fn stiff_decay_with_sdirk() {
        let spec = GeneralRfdeSpec::new(1, 1.0, |_, _, x: &HistorySegment<f64>, _, out: &mut [f64]| {
            out[0] = -1e6 * x.newest()[0];
            Ok(())
        });
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let opts = IntegrateOptions::with_scheme(Scheme::Sdirk2);
        let tr = integrate_with(&spec, &x0, &d, no_input, 0.0, 2.0, 0.125, opts).unwrap();
        assert!(tr.status.is_completed());
        assert!(tr.final_state()[0].abs() < 1e-12);
        let tr = integrate(&spec, &x0, &d, no_input, 0.0, 2.0, 0.125).unwrap();
        assert!(matches!(tr.status, Status::BlowUp { .. }));
    }

    #[test]
    fn sdirk_is_second_order() {
        let d = DisturbanceSignal::zero(0, 1.0);
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let opts = IntegrateOptions::with_scheme(Scheme::Sdirk2);
        let err = |dt: f64| {
            let tr = integrate_with(&decay(1.0), &x0, &d, no_input, 0.0, 1.0, dt, opts).unwrap();
            (tr.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let p = (err(1.0 / 32.0) / err(1.0 / 64.0)).log2();
        assert!((1.8..2.3).contains(&p), "{p}");
    }

    #[test]
    fn feedback_is_projected_and_disturbance_recorded() {
        let spec = GeneralRfdeSpec::new(1, 1.0, |_, d: &[f64], _, u: &[f64], out: &mut [f64]| {
            out[0] = u[0] + d[0];
            Ok(())
        })
        .with_control_set(vec![(-0.5, 0.5)])
        .with_disturbance_box(vec![(-1.0, 1.0)]);
        let x0 = HistorySegment::constant(1.0, 8, &[0.0]).unwrap();
        let d = make_disturbance(1, 0.25, &spec.disturbance_box, 0.0, 2.0).unwrap();
        let tr = integrate(&spec, &x0, &d, |_, _| vec![10.0], 0.0, 2.0, 0.125).unwrap();
        assert!(tr.controls.iter().all(|u| u == &[0.5]));
        assert_eq!(tr.disturbances[3], d.values[1]);
    }

    #[test]
    fn windows_match_recorded_nodes() {
        let x0 = HistorySegment::constant(1.0, 8, &[1.0]).unwrap();
        let d = DisturbanceSignal::zero(0, 0.125);
        let tr = integrate(&delayed(), &x0, &d, no_input, 0.0, 3.0, 0.125).unwrap();
        let w = tr.window(16);
        for j in 0..=8 {
            assert_eq!(w.sample(j), tr.states[8 + j].as_slice());
        }
        assert_eq!(tr.window(4).oldest(), &[1.0]);
    }
}
