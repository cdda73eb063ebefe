use thiserror::Error;

use super::{parse, BinOp, Expr, Func, ParseError, Var};
use crate::history::{HistoryError, HistorySegment};
use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative number")]
    SqrtNegative,
    #[error("unbound identifier `{0}`")]
    Unbound(String),
    #[error("non-finite result")]
    NonFinite,
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Evaluation fault with the offending sub-expression.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{path}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub path: String,
}

/// Bindings for one evaluation. Component indices in expressions are 1-based.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, T: Real> {
    pub t: T,
    pub r: T,
    pub x: Option<&'a HistorySegment<T>>,
    pub d: &'a [T],
    pub u: &'a [T],
    pub s: Option<T>,
}

impl<'a, T: Real> Env<'a, T> {
    pub fn new(r: T) -> Self {
        Self { t: T::zero(), r, x: None, d: &[], u: &[], s: None }
    }
}

fn fault(kind: EvalErrorKind, e: &Expr) -> EvalError {
    EvalError { kind, path: e.to_string() }
}

impl Expr {
    pub fn eval<T: Real>(&self, env: &Env<'_, T>) -> Result<T, EvalError> {
        self.eval_bare(env, None)
    }

    fn history<'a, T: Real>(&self, env: &Env<'a, T>) -> Result<&'a HistorySegment<T>, EvalError> {
        env.x.ok_or_else(|| fault(EvalErrorKind::Unbound("x".into()), self))
    }

    fn eval_bare<T: Real>(&self, env: &Env<'_, T>, bare: Option<(usize, T)>) -> Result<T, EvalError> {
        let hist_err = |e: HistoryError| fault(e.into(), self);
        let v = match self {
            Expr::Num(v) => T::lit(*v),
            Expr::Var(Var::T) => env.t,
            Expr::Var(Var::R) => env.r,
            Expr::Var(Var::S) => env.s.ok_or_else(|| fault(EvalErrorKind::Unbound("s".into()), self))?,
            Expr::Var(Var::U(j)) => *env
                .u
                .get(j - 1)
                .ok_or_else(|| fault(EvalErrorKind::Unbound(format!("u{j}")), self))?,
            Expr::Var(Var::D(j)) => *env
                .d
                .get(j - 1)
                .ok_or_else(|| fault(EvalErrorKind::Unbound(format!("d{j}")), self))?,
            Expr::Bare(i) => match bare {
                Some((c, v)) if c == *i => v,
                _ => return Err(fault(EvalErrorKind::Unbound(format!("x{i}")), self)),
            },
            Expr::Access(i) => {
                let x = self.history(env)?;
                *x.newest()
                    .get(i - 1)
                    .ok_or_else(|| hist_err(HistoryError::ComponentOutOfRange { index: *i, dim: x.dim() }))?
            }
            Expr::Delay(i, tau) => {
                let x = self.history(env)?;
                let tau = tau.eval_bare(env, bare)?;
                let row = x.at_delay(tau).map_err(hist_err)?;
                *row.get(i - 1)
                    .ok_or_else(|| hist_err(HistoryError::ComponentOutOfRange { index: *i, dim: x.dim() }))?
            }
            Expr::Norm(i) => self.history(env)?.component_sup(i - 1).map_err(hist_err)?,
            Expr::Integral { integrand, component, window } => {
                let x = self.history(env)?;
                let w = window.eval_bare(env, bare)?;
                integrate_window(x, *component - 1, w, |v| integrand.eval_bare(env, Some((*component, v))))
                    .map_err(|e| match e {
                        WindowError::History(h) => hist_err(h),
                        WindowError::Eval(e) => e,
                    })?
            }
            Expr::Call(f, a) => {
                let a = a.eval_bare(env, bare)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Sq => a * a,
                    Func::Sqrt => {
                        if a < T::zero() {
                            return Err(fault(EvalErrorKind::SqrtNegative, self));
                        }
                        a.sqrt()
                    }
                }
            }
            Expr::Neg(a) => -a.eval_bare(env, bare)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval_bare(env, bare)?;
                let b = b.eval_bare(env, bare)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == T::zero() {
                            return Err(fault(EvalErrorKind::DivisionByZero, self));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fault(EvalErrorKind::NonFinite, self))
        }
    }

    /// Evaluation of an expression in `s` (and `r`, fixed to `r`) on any scalar,
    /// including dual numbers.
    pub fn eval_scalar<S: Scalar>(&self, s: &S, r: f64) -> Result<S, EvalError> {
        let v = match self {
            Expr::Num(v) => S::from_f64(*v),
            Expr::Var(Var::S) => s.clone(),
            Expr::Var(Var::R) => S::from_f64(r),
            Expr::Call(f, a) => {
                let a = a.eval_scalar(s, r)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Sq => a.square(),
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(fault(EvalErrorKind::SqrtNegative, self));
                        }
                        a.sqrt()
                    }
                }
            }
            Expr::Neg(a) => -a.eval_scalar(s, r)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval_scalar(s, r)?;
                let b = b.eval_scalar(s, r)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(fault(EvalErrorKind::DivisionByZero, self));
                        }
                        a / b
                    }
                    BinOp::Pow => match self.children()[1] {
                        Expr::Num(k) if k.fract() == 0.0 && k.abs() < 64.0 => a.powi(*k as i32),
                        _ => a.pow(&b),
                    },
                }
            }
            other => {
                return Err(fault(EvalErrorKind::Unbound(other.to_string()), other));
            }
        };
        if v.value().is_finite() {
            Ok(v)
        } else {
            Err(fault(EvalErrorKind::NonFinite, self))
        }
    }

    /// [`Expr::eval_scalar`] with `r = 0`, mapping faults to NaN.
    pub fn eval_in_s<S: Scalar>(&self, s: &S) -> S {
        self.eval_scalar(s, 0.0).unwrap_or_else(|_| S::from_f64(f64::NAN))
    }
}

enum WindowError {
    History(HistoryError),
    Eval(EvalError),
}

/// Trapezoid of `f(x_c(θ))` over `[-w, 0]` on the history grid.
fn integrate_window<T: Real>(
    x: &HistorySegment<T>,
    c: usize,
    w: T,
    f: impl Fn(T) -> Result<T, EvalError>,
) -> Result<T, WindowError> {
    if c >= x.dim() {
        return Err(WindowError::History(HistoryError::ComponentOutOfRange { index: c + 1, dim: x.dim() }));
    }
    let r = x.r();
    if !(w >= T::zero() && w <= r * T::lit(1.0 + 1e-12)) {
        return Err(WindowError::History(HistoryError::DelayOutOfRange { tau: w.as_f64(), r: r.as_f64() }));
    }
    let half = T::lit(0.5);
    if w >= r {
        let vals: Result<Vec<T>, _> = (0..=x.m()).map(|k| f(x.sample(k)[c])).collect();
        let vals = vals.map_err(WindowError::Eval)?;
        let inner = vals[1..x.m()].iter().fold(T::zero(), |a, &b| a + b);
        return Ok(x.dtheta() * (inner + half * (vals[0] + vals[x.m()])));
    }
    if w == T::zero() {
        return Ok(T::zero());
    }
    let n = (w / x.dtheta()).ceil().to_usize().unwrap_or(1).max(1);
    let h = w / T::lit(n as f64);
    let mut acc = T::zero();
    let mut prev = f(x.eval(-w)[c]).map_err(WindowError::Eval)?;
    for k in 1..=n {
        let th = if k == n { T::zero() } else { -w + h * T::lit(k as f64) };
        let cur = f(x.eval(th)[c]).map_err(WindowError::Eval)?;
        acc = acc + half * h * (prev + cur);
        prev = cur;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BindError {
    #[error("expected {expected} right-hand sides, got {got}")]
    Count { expected: usize, got: usize },
    #[error("component {component}: {error}")]
    Parse { component: usize, error: ParseError },
    #[error("component {component}: x{index} outside 1..={n}")]
    StateIndex { component: usize, index: usize, n: usize },
    #[error("component {component}: d{index} outside 1..={l}")]
    DisturbanceIndex { component: usize, index: usize, l: usize },
    #[error("component {component}: u{index} outside 1..=1")]
    ControlIndex { component: usize, index: usize },
    #[error("component {component}: delay {tau} outside [0, {r}]")]
    DelayRange { component: usize, tau: f64, r: f64 },
    #[error("component {component}: `s` is not available in a right-hand side")]
    EnvelopeVariable { component: usize },
}

/// Validated right-hand side `f(t, d, x, u) ∈ ℜⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRhs {
    pub exprs: Vec<Expr>,
    pub n: usize,
    pub l: usize,
    pub r: f64,
    /// Bind-time diagnostics, e.g. a failed zero-at-zero check.
    pub warnings: Vec<String>,
}

impl BoundRhs {
    pub fn eval<T: Real>(&self, t: T, d: &[T], x: &HistorySegment<T>, u: &[T], out: &mut [T]) -> Result<(), EvalError> {
        let env = Env { t, r: T::lit(self.r), x: Some(x), d, u, s: None };
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }
}

/// Parses and validates one expression per state component.
pub fn bind_rhs<S: AsRef<str>>(texts: &[S], n: usize, l: usize, r: f64) -> Result<BoundRhs, BindError> {
    if texts.len() != n {
        return Err(BindError::Count { expected: n, got: texts.len() });
    }
    let mut exprs = Vec::with_capacity(n);
    for (c, text) in texts.iter().enumerate() {
        let component = c + 1;
        let e = parse(text.as_ref()).map_err(|error| BindError::Parse { component, error })?;
        let mut err = None;
        e.walk(&mut |node| {
            if err.is_some() {
                return;
            }
            err = match node {
                Expr::Access(i) | Expr::Bare(i) | Expr::Norm(i) | Expr::Delay(i, _) if *i > n => {
                    Some(BindError::StateIndex { component, index: *i, n })
                }
                Expr::Integral { component: i, .. } if *i > n => {
                    Some(BindError::StateIndex { component, index: *i, n })
                }
                Expr::Var(Var::D(j)) if *j > l => Some(BindError::DisturbanceIndex { component, index: *j, l }),
                Expr::Var(Var::U(j)) if *j > 1 => Some(BindError::ControlIndex { component, index: *j }),
                Expr::Var(Var::S) => Some(BindError::EnvelopeVariable { component }),
                Expr::Delay(_, tau) | Expr::Integral { window: tau, .. } => {
                    match tau.eval(&Env::new(r)) {
                        Ok(v) if !(0.0..=r).contains(&v) => Some(BindError::DelayRange { component, tau: v, r }),
                        _ => None,
                    }
                }
                _ => None,
            };
        });
        if let Some(e) = err {
            return Err(e);
        }
        exprs.push(e);
    }
    let mut rhs = BoundRhs { exprs, n, l, r, warnings: Vec::new() };
    rhs.warnings = zero_check(&rhs);
    Ok(rhs)
}

fn zero_check(rhs: &BoundRhs) -> Vec<String> {
    let Ok(zero) = HistorySegment::<f64>::zeros(rhs.r.max(f64::MIN_POSITIVE), 8, rhs.n) else {
        return vec!["zero-at-zero check skipped: invalid delay".into()];
    };
    let mut out = vec![0.0; rhs.n];
    let mut warnings = Vec::new();
    for &t in &[0.0, 0.5, 1.7, 10.0] {
        for pattern in [0.0, 1.0, -1.0] {
            let d: Vec<f64> = (0..rhs.l).map(|j| if j % 2 == 0 { pattern } else { -pattern }).collect();
            match rhs.eval(t, &d, &zero, &[0.0], &mut out) {
                Ok(()) => {
                    if let Some(i) = out.iter().position(|v| *v != 0.0) {
                        warnings.push(format!(
                            "f(t, d, 0, 0) != 0 at t = {t}, d = {d:?}: component {} = {}",
                            i + 1,
                            out[i]
                        ));
                    }
                }
                Err(e) => warnings.push(format!("zero-at-zero check failed at t = {t}: {e}")),
            }
            if !warnings.is_empty() {
                return warnings;
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(cols: &[f64]) -> HistorySegment<f64> {
        HistorySegment::constant(1.0, 16, cols).unwrap()
    }

    #[test]
    fn hand_evaluation() {
        let x = HistorySegment::from_fn(1.0, 16, 2, |_| vec![2.0, 3.0]).unwrap();
        let env = Env { t: 0.0, r: 1.0, x: Some(&x), d: &[-1.0], u: &[], s: None };
        assert_eq!(parse("x1(0) + d1*norm_r(x2)").unwrap().eval(&env), Ok(-1.0));
        let one = hist(&[1.0]);
        let env = Env { x: Some(&one), ..Env::new(1.0) };
        assert!((parse("integral(sq(x1), r)").unwrap().eval(&env).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn delay_zero_is_newest() {
        let x = HistorySegment::from_fn(1.0, 16, 1, |t: f64| vec![t.sin() + 0.3]).unwrap();
        let env = Env { x: Some(&x), ..Env::new(1.0) };
        assert_eq!(parse("delay(x1, 0)").unwrap().eval(&env).unwrap(), x.newest()[0]);
    }

    #[test]
    fn partial_window() {
        let x = HistorySegment::from_fn(1.0, 100, 1, |t| vec![t]).unwrap();
        let env = Env { x: Some(&x), ..Env::new(1.0) };
        let v = parse("integral(sq(x1), 0.5)").unwrap().eval(&env).unwrap();
        assert!((v - 0.125 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn faults_name_the_subexpression() {
        let env = Env::<f64>::new(1.0);
        let e = parse("1 + 1/(t - t)").unwrap().eval(&env).unwrap_err();
        assert_eq!(e.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(e.path, "(1 / (t - t))");
        let e = parse("sqrt(-1)").unwrap().eval(&env).unwrap_err();
        assert_eq!(e.kind, EvalErrorKind::SqrtNegative);
        assert!(matches!(parse("d3").unwrap().eval(&env).unwrap_err().kind, EvalErrorKind::Unbound(_)));
    }

    #[test]
    fn precedence_values() {
        let env = Env::<f64>::new(1.0);
        assert_eq!(parse("1+2*3").unwrap().eval(&env), Ok(7.0));
        assert_eq!(parse("-2^2").unwrap().eval(&env), Ok(-4.0));
        assert_eq!(parse("2^3^2").unwrap().eval(&env), Ok(512.0));
    }

    #[test]
    fn binding_the_delay_example() {
        let rhs = bind_rhs(&["d1*integral(sq(x1), r) + x2(0)", "d2*norm_r(x2) + u"], 2, 2, 1.0).unwrap();
        assert!(rhs.warnings.is_empty(), "{:?}", rhs.warnings);
        let rhs = bind_rhs(&["1"], 1, 0, 1.0).unwrap();
        assert_eq!(rhs.warnings.len(), 1);
        assert!(matches!(
            bind_rhs(&["x3(0)", "0"], 2, 0, 1.0),
            Err(BindError::StateIndex { index: 3, .. })
        ));
        assert!(matches!(bind_rhs(&["delay(x1, 2)"], 1, 0, 1.0), Err(BindError::DelayRange { .. })));
    }

    #[test]
    fn scalar_evaluation_in_s() {
        let e = parse("1 + r*s^2").unwrap();
        assert_eq!(e.eval_scalar(&2.0f64, 0.5).unwrap(), 3.0);
        let d = crate::scalar::derivative(|s| e.eval_scalar(&s, 0.5).unwrap(), 2.0);
        assert_eq!(d, 2.0);
    }
}
