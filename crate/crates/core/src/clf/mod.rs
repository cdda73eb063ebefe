//! Finite-dimensional CLF tools for systems whose Lyapunov derivative is
//! quadratic in a scalar input:
//!
//! ```text
//! ∂V/∂t + ∇V·f(t, x, u) = a(t,x) u² + b(t,x) u + c(t,x)
//! ```
//!
//! The decrease requirement is `inf_u (a u² + b u + c) ≤ -ρ(V) + q(t)`.

mod certify;
mod feedback;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

pub use certify::{ode_certify, OdeCertReport, OdeProblem, SeedOutcome};
pub use feedback::{feedback_k1_negative_a, implication_checks, min_norm_feedback, ImplicationReport, ProbeCheck};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClfError {
    #[error("a = {a} is not negative")]
    WrongRegion { a: f64 },
    #[error("postcondition violated: a u² + b u + c + ρ(V) = {residual}")]
    Postcondition { residual: f64 },
    #[error("no admissible input in [{lo}, {hi}]; min Ψ - q = {residual}")]
    Infeasible { lo: f64, hi: f64, residual: f64 },
    #[error("data invalid at t = {t}: {what}")]
    Invalid { t: f64, what: String },
}

/// Ψ shape used where `a < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiVariant {
    /// `ρ(V) - b²/(4a) + c`, constant in `u`.
    #[default]
    Full,
    /// `ρ(V) + b u + c`.
    LinearTail,
}

/// Coefficients frozen at one `(t, x)`, with `rho_v = ρ(V(t, x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeffs<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub rho_v: T,
}

impl<T: Real> Coeffs<T> {
    pub fn new(a: T, b: T, c: T, rho_v: T) -> Self {
        Self { a, b, c, rho_v }
    }

    /// `inf_u (a u² + b u + c)` in closed form.
    pub fn inf_quadratic(&self) -> T {
        let Self { a, b, c, .. } = *self;
        if a > T::zero() {
            c - b * b / (T::lit(4.0) * a)
        } else if a < T::zero() || b != T::zero() {
            T::neg_infinity()
        } else {
            c
        }
    }

    pub fn quadratic(&self, u: T) -> T {
        (self.a * u + self.b) * u + self.c
    }

    pub fn psi(&self, u: T, variant: PsiVariant) -> T {
        let Self { a, b, c, rho_v } = *self;
        if a >= T::zero() {
            return rho_v + self.quadratic(u);
        }
        match variant {
            PsiVariant::Full => rho_v - b * b / (T::lit(4.0) * a) + c,
            PsiVariant::LinearTail => rho_v + b * u + c,
        }
    }
}

pub type TimeStateFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;
pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type GradFn<T> = Arc<dyn Fn(T, &[T]) -> Vec<T> + Send + Sync>;

/// `a, b, c, V` as functions of `(t, x)`, with `ρ` and `q`.
#[derive(Clone)]
pub struct QuadraticControlData<T: Real> {
    pub a: TimeStateFn<T>,
    pub b: TimeStateFn<T>,
    pub c: TimeStateFn<T>,
    pub rho: ScalarFn<T>,
    pub q: ScalarFn<T>,
    pub v: TimeStateFn<T>,
}

impl<T: Real> fmt::Debug for QuadraticControlData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("QuadraticControlData { .. }")
    }
}

impl<T: Real> QuadraticControlData<T> {
    pub fn coeffs(&self, t: T, x: &[T]) -> Coeffs<T> {
        Coeffs {
            a: (self.a)(t, x),
            b: (self.b)(t, x),
            c: (self.c)(t, x),
            rho_v: (self.rho)((self.v)(t, x)),
        }
    }

    /// Constant coefficients; handy for pointwise checks.
    pub fn constant(a: T, b: T, c: T, rho_v: T, q: T) -> Self {
        Self {
            a: Arc::new(move |_, _| a),
            b: Arc::new(move |_, _| b),
            c: Arc::new(move |_, _| c),
            rho: Arc::new(move |_| rho_v),
            q: Arc::new(move |_| q),
            v: Arc::new(|_, _| T::zero()),
        }
    }

    /// Sampled checks: `a = b = c = 0` at `x = 0`, and the decrease
    /// requirement at every probe.
    pub fn validate(&self, probes: &[(T, Vec<T>)]) -> Result<(), ClfError> {
        for (t, x) in probes {
            let zero = vec![T::zero(); x.len()];
            let z = self.coeffs(*t, &zero);
            if z.a != T::zero() || z.b != T::zero() || z.c != T::zero() {
                return Err(ClfError::Invalid { t: t.as_f64(), what: "a, b, c must vanish at x = 0".into() });
            }
            let k = self.coeffs(*t, x);
            let bound = -k.rho_v + (self.q)(*t);
            if !(k.inf_quadratic() <= bound) {
                return Err(ClfError::Invalid {
                    t: t.as_f64(),
                    what: format!("inf_u = {} exceeds -rho(V) + q = {} at x = {:?}", k.inf_quadratic(), bound, x),
                });
            }
        }
        Ok(())
    }
}

/// `Ψ(t, x, u)` for the given variant.
pub fn psi_quadratic<T: Real>(data: &QuadraticControlData<T>, t: T, x: &[T], u: T, variant: PsiVariant) -> T {
    data.coeffs(t, x).psi(u, variant)
}
