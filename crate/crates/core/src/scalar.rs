//! Scalar abstractions.
//!
//! [`Real`] is the floating-point bound used by the numeric containers
//! (histories, envelopes, integrators). [`Scalar`] is the smaller surface the
//! gain formulas are written against; it is implemented for every [`Real`]
//! and for [`Dual`], a forward-mode number whose tangent may itself be dual.
//! Nesting is dynamic, so gradients of functions that internally take
//! gradients (the backstepping `delta_j` terms) need no type-level recursion.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Real:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Arithmetic needed to evaluate gain formulas, including under differentiation.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal value with every tangent stripped.
    fn value(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn pow(&self, e: &Self) -> Self {
        (e.clone() * self.ln()).exp()
    }

    fn scale(&self, c: f64) -> Self {
        self.clone() * Self::from_f64(c)
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl<T: Real> Scalar for T {
    fn from_f64(v: f64) -> Self {
        T::lit(v)
    }
    fn value(&self) -> f64 {
        self.as_f64()
    }
    fn exp(&self) -> Self {
        Float::exp(*self)
    }
    fn ln(&self) -> Self {
        Float::ln(*self)
    }
    fn sqrt(&self) -> Self {
        Float::sqrt(*self)
    }
    fn abs(&self) -> Self {
        Float::abs(*self)
    }
    fn sin(&self) -> Self {
        Float::sin(*self)
    }
    fn cos(&self) -> Self {
        Float::cos(*self)
    }
    fn powi(&self, n: i32) -> Self {
        Float::powi(*self, n)
    }
    fn pow(&self, e: &Self) -> Self {
        Float::powf(*self, *e)
    }
}

/// Forward-mode dual number `primal + tangent·ε` with dynamically nested parts.
///
/// A `Const` is constant in every infinitesimal. Values produced by one
/// differentiation pass all carry the same outermost `ε`; callers that open a
/// new pass must lift *every* input with [`Dual::variable`] or
/// [`Dual::passive`] so that two different infinitesimals never meet at the
/// same nesting level.
#[derive(Clone, PartialEq)]
pub enum Dual {
    Const(f64),
    Pair(Box<Dual>, Box<Dual>),
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual::Const(v)
    }

    /// Seed `x` as the differentiation variable of a new pass.
    pub fn variable(x: Dual) -> Self {
        Dual::Pair(Box::new(x), Box::new(Dual::Const(1.0)))
    }

    /// Lift `x` into a new pass with zero tangent.
    pub fn passive(x: Dual) -> Self {
        Dual::Pair(Box::new(x), Box::new(Dual::Const(0.0)))
    }

    pub fn primal(&self) -> Dual {
        match self {
            Dual::Const(_) => self.clone(),
            Dual::Pair(p, _) => (**p).clone(),
        }
    }

    pub fn tangent(&self) -> Dual {
        match self {
            Dual::Const(_) => Dual::Const(0.0),
            Dual::Pair(_, t) => (**t).clone(),
        }
    }

    fn split(self) -> (Dual, Dual) {
        match self {
            Dual::Const(_) => (self, Dual::Const(0.0)),
            Dual::Pair(p, t) => (*p, *t),
        }
    }

    fn pair(p: Dual, t: Dual) -> Dual {
        Dual::Pair(Box::new(p), Box::new(t))
    }

    /// Apply `f` with derivative `df` through the outermost level.
    fn chain(self, f: impl Fn(&Dual) -> Dual, df: impl Fn(&Dual) -> Dual) -> Dual {
        match self {
            Dual::Const(_) => f(&self),
            Dual::Pair(p, t) => {
                let fp = f(&p);
                let d = df(&p);
                Dual::pair(fp, d * *t)
            }
        }
    }
}

impl fmt::Debug for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dual::Const(v) => write!(f, "{v:?}"),
            Dual::Pair(p, t) => write!(f, "({p:?} + {t:?}ε)"),
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        match (self, rhs) {
            (Dual::Const(a), Dual::Const(b)) => Dual::Const(a + b),
            (a, b) => {
                let (a0, a1) = a.split();
                let (b0, b1) = b.split();
                Dual::pair(a0 + b0, a1 + b1)
            }
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        match (self, rhs) {
            (Dual::Const(a), Dual::Const(b)) => Dual::Const(a - b),
            (a, b) => {
                let (a0, a1) = a.split();
                let (b0, b1) = b.split();
                Dual::pair(a0 - b0, a1 - b1)
            }
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        match (self, rhs) {
            (Dual::Const(a), Dual::Const(b)) => Dual::Const(a * b),
            (Dual::Const(a), Dual::Pair(p, t)) | (Dual::Pair(p, t), Dual::Const(a)) => {
                Dual::pair(*p * Dual::Const(a), *t * Dual::Const(a))
            }
            (a, b) => {
                let (a0, a1) = a.split();
                let (b0, b1) = b.split();
                let t = a0.clone() * b1 + a1 * b0.clone();
                Dual::pair(a0 * b0, t)
            }
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        match (self, rhs) {
            (Dual::Const(a), Dual::Const(b)) => Dual::Const(a / b),
            (Dual::Pair(p, t), Dual::Const(b)) => Dual::pair(*p / Dual::Const(b), *t / Dual::Const(b)),
            (a, b) => {
                let (a0, a1) = a.split();
                let (b0, b1) = b.split();
                let q = a0 / b0.clone();
                let t = (a1 - q.clone() * b1) / b0;
                Dual::pair(q, t)
            }
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        match self {
            Dual::Const(a) => Dual::Const(-a),
            Dual::Pair(p, t) => Dual::pair(-*p, -*t),
        }
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::Const(v)
    }

    fn value(&self) -> f64 {
        match self {
            Dual::Const(v) => *v,
            Dual::Pair(p, _) => p.value(),
        }
    }

    fn exp(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.exp()),
            _ => self.clone().chain(|p| p.exp(), |p| p.exp()),
        }
    }

    fn ln(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.ln()),
            _ => self
                .clone()
                .chain(|p| p.ln(), |p| Dual::Const(1.0) / p.clone()),
        }
    }

    fn sqrt(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.sqrt()),
            _ => self.clone().chain(
                |p| p.sqrt(),
                |p| Dual::Const(0.5) / p.sqrt(),
            ),
        }
    }

    fn abs(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.abs()),
            _ => {
                if self.value() < 0.0 {
                    -self.clone()
                } else {
                    self.clone()
                }
            }
        }
    }

    fn sin(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.sin()),
            _ => self.clone().chain(|p| p.sin(), |p| p.cos()),
        }
    }

    fn cos(&self) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.cos()),
            _ => self.clone().chain(|p| p.cos(), |p| -p.sin()),
        }
    }

    fn powi(&self, n: i32) -> Self {
        match self {
            Dual::Const(v) => Dual::Const(v.powi(n)),
            _ => match n {
                0 => Dual::Const(1.0),
                1 => self.clone(),
                2 => self.clone() * self.clone(),
                _ => self.clone().chain(
                    |p| p.powi(n),
                    |p| p.powi(n - 1) * Dual::Const(n as f64),
                ),
            },
        }
    }
}

/// Derivative of a scalar function at `x` by one forward pass.
pub fn derivative(f: impl Fn(Dual) -> Dual, x: f64) -> f64 {
    f(Dual::variable(Dual::Const(x))).tangent().value()
}

/// Gradient of `f` at `x` (one forward pass per coordinate), lifted one level
/// above whatever nesting `x` already carries.
pub fn gradient(f: impl Fn(&[Dual]) -> Dual, x: &[Dual]) -> Vec<Dual> {
    (0..x.len())
        .map(|l| {
            let lifted: Vec<Dual> = x
                .iter()
                .enumerate()
                .map(|(m, v)| {
                    if m == l {
                        Dual::variable(v.clone())
                    } else {
                        Dual::passive(v.clone())
                    }
                })
                .collect();
            f(&lifted).tangent()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_derivatives() {
        let d = derivative(|x| x.clone() * x.clone() * x, 2.0);
        assert_eq!(d, 12.0);
        let d = derivative(|x| Scalar::exp(&x.scale(3.0)), 0.0);
        assert!((d - 3.0).abs() < 1e-15);
        let d = derivative(|x| Dual::Const(1.0) / x, 4.0);
        assert!((d + 1.0 / 16.0).abs() < 1e-15);
        let d = derivative(|x| Scalar::sqrt(&x), 4.0);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn nested_second_derivative() {
        // d²/dx² of x^3 · sin x at x = 0.7
        let x0 = 0.7f64;
        let inner = |x: Dual| x.powi(3) * Scalar::sin(&x);
        let outer = |x: Dual| {
            let lifted = Dual::variable(x);
            inner(lifted).tangent()
        };
        let second = derivative(outer, x0);
        let exact = 6.0 * x0 * x0.sin() + 6.0 * x0 * x0 * x0.cos() - x0.powi(3) * x0.sin();
        assert!((second - exact).abs() < 1e-12, "{second} vs {exact}");
    }

    #[test]
    fn gradient_of_gradient_norm() {
        // f(x,y) = |∇(x²y)| = sqrt(4x²y² + x⁴); check ∂f/∂x by finite differences.
        let g = |v: &[Dual]| v[0].clone() * v[0].clone() * v[1].clone();
        let norm_grad = |v: &[Dual]| {
            let gr = gradient(g, v);
            gr.iter()
                .fold(Dual::Const(0.0), |acc, c| acc + c.clone() * c.clone())
                .sqrt()
        };
        let at = [Dual::Const(0.8), Dual::Const(-1.3)];
        let grad = gradient(norm_grad, &at);
        let f = |x: f64, y: f64| (4.0 * x * x * y * y + x.powi(4)).sqrt();
        let h = 1e-6;
        let fd = (f(0.8 + h, -1.3) - f(0.8 - h, -1.3)) / (2.0 * h);
        assert!((grad[0].value() - fd).abs() < 1e-7);
    }

    #[test]
    fn real_scalars_agree_with_float() {
        let x = 1.25f32;
        assert_eq!(Scalar::exp(&x), x.exp());
        assert_eq!(<f64 as Scalar>::from_f64(2.5).powi(2), 6.25);
    }
}
