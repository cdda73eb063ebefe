//! Expression language for right-hand sides and envelope formulas.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?
//! primary := number | "(" expr ")" | ident | ident "(" args ")"
//! ```
//!
//! `^` binds tighter than unary minus, so `-2^2` is `-4`, and is right
//! associative. Identifiers: `t`, `r`, `s`, `u` (= `u1`), `u<j>`, `d<j>`,
//! `x<i>` (bare, only inside an integrand), `x<i>(0)`, `delay(x<i>, tau)`,
//! `norm_r(x<i>)`, `integral(f, window)`, and the functions `sin cos exp abs
//! sqrt sq pow`.

mod eval;
mod parser;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use eval::{bind_rhs, BindError, BoundRhs, Env, EvalError};
pub use parser::{parse, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    R,
    S,
    /// 1-based control index.
    U(usize),
    /// 1-based disturbance index.
    D(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Sq,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sq => "sq",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "sq" => Func::Sq,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

/// Component indices are 1-based, as written.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    /// `x_i(0)`.
    Access(usize),
    /// Bare `x_i` inside an integrand.
    Bare(usize),
    Delay(usize, Box<Expr>),
    Norm(usize),
    Integral { integrand: Box<Expr>, component: usize, window: Box<Expr> },
    Call(Func, Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Access(_) | Expr::Bare(_) | Expr::Norm(_) => vec![],
            Expr::Delay(_, tau) => vec![tau],
            Expr::Integral { integrand, window, .. } => vec![integrand, window],
            Expr::Call(_, a) | Expr::Neg(a) => vec![a],
            Expr::Bin(_, a, b) => vec![a, b],
        }
    }

    /// Every node, pre-order.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Copy with every `r` replaced by the literal `r`.
    pub fn substitute_r(&self, r: f64) -> Expr {
        let sub = |e: &Expr| Box::new(e.substitute_r(r));
        match self {
            Expr::Var(Var::R) => Expr::Num(r),
            Expr::Delay(i, tau) => Expr::Delay(*i, sub(tau)),
            Expr::Integral { integrand, component, window } => Expr::Integral {
                integrand: sub(integrand),
                component: *component,
                window: sub(window),
            },
            Expr::Call(f, a) => Expr::Call(*f, sub(a)),
            Expr::Neg(a) => Expr::Neg(sub(a)),
            Expr::Bin(op, a, b) => Expr::Bin(*op, sub(a), sub(b)),
            e => e.clone(),
        }
    }

    /// True when the tree references only numbers, `r` and `s`.
    pub fn is_univariate_in_s(&self) -> bool {
        let mut ok = true;
        self.walk(&mut |e| {
            ok &= matches!(e, Expr::Num(_) | Expr::Var(Var::S | Var::R) | Expr::Call(..) | Expr::Neg(_) | Expr::Bin(..))
        });
        ok
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => f.write_str("t"),
            Var::R => f.write_str("r"),
            Var::S => f.write_str("s"),
            Var::U(j) => write!(f, "u{j}"),
            Var::D(j) => write!(f, "d{j}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => write!(f, "(-{})", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Access(i) => write!(f, "x{i}(0)"),
            Expr::Bare(i) => write!(f, "x{i}"),
            Expr::Delay(i, tau) => write!(f, "delay(x{i}, {tau})"),
            Expr::Norm(i) => write!(f, "norm_r(x{i})"),
            Expr::Integral { integrand, window, .. } => write!(f, "integral({integrand}, {window})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_parse() {
        let e = parse("x1(0) + d1*norm_r(x2)").unwrap();
        let want = Expr::bin(
            BinOp::Add,
            Expr::Access(1),
            Expr::bin(BinOp::Mul, Expr::Var(Var::D(1)), Expr::Norm(2)),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn integral_term() {
        let e = parse("d1 * integral(sq(x1), r)").unwrap();
        let want = Expr::bin(
            BinOp::Mul,
            Expr::Var(Var::D(1)),
            Expr::Integral {
                integrand: Box::new(Expr::Call(Func::Sq, Box::new(Expr::Bare(1)))),
                component: 1,
                window: Box::new(Expr::Var(Var::R)),
            },
        );
        assert_eq!(e, want);
    }

    #[test]
    fn round_trip_through_display() {
        for s in ["-2^2", "1+2*3", "(-3)", "2^-1^2", "a", "delay(x2, 0.25*r) - sin(t)/u"] {
            let Ok(e) = parse(s) else { continue };
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{s} -> {e}");
        }
    }

    #[test]
    fn serde_as_text() {
        let e = parse("1 + s^2").unwrap();
        let j = serde_json::to_string(&e).unwrap();
        assert_eq!(j, "\"(1 + (s ^ 2))\"");
        assert_eq!(serde_json::from_str::<Expr>(&j).unwrap(), e);
    }
}
