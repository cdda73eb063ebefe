use std::fmt;

use thiserror::Error;

use super::{BinOp, Expr, Func, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Lexical(char),
    Unexpected { found: String, expected: Vec<String> },
    UnknownIdentifier(String),
    Arity { name: String, expected: usize, got: usize },
    BadArgument { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Lexical(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::Unexpected { found, expected } => {
                write!(f, "found {found}, expected one of: {}", expected.join(", "))
            }
            ParseErrorKind::UnknownIdentifier(s) => write!(f, "unknown identifier `{s}`"),
            ParseErrorKind::Arity { name, expected, got } => {
                write!(f, "`{name}` takes {expected} argument(s), got {got}")
            }
            ParseErrorKind::BadArgument { name, reason } => write!(f, "`{name}`: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ParseError {
                line: l0,
                column: c0,
                kind: ParseErrorKind::Lexical(c),
            })?;
            col += i - start;
            out.push(Token { tok: Tok::Num(v), line: l0, column: c0 });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: l0, column: c0 });
            continue;
        }
        if "+-*/^(),".contains(c) {
            out.push(Token { tok: Tok::Sym(c), line: l0, column: c0 });
            i += 1;
            col += 1;
            continue;
        }
        return Err(ParseError { line: l0, column: c0, kind: ParseErrorKind::Lexical(c) });
    }
    out.push(Token { tok: Tok::End, line, column: col });
    Ok(out)
}

/// Parses one expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let e = p.expr()?;
    p.expect_end()?;
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// `x3` or `x_3` → 3.
fn state_index(name: &str) -> Option<usize> {
    indexed(name, 'x')
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    let rest = rest.strip_prefix('_').unwrap_or(rest);
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok().filter(|&i| i >= 1)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, tok: &Token, kind: ParseErrorKind) -> ParseError {
        ParseError { line: tok.line, column: tok.column, kind }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        self.err_at(
            t,
            ParseErrorKind::Unexpected {
                found: t.tok.describe(),
                expected: expected.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char, expected: &str) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.unexpected(&[expected]))
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.peek().tok == Tok::End {
            Ok(())
        } else {
            Err(self.unexpected(&["operator", "end of input"]))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat('^') {
            return Ok(Expr::bin(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek().clone();
        match &tok.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(*v))
            }
            Tok::Sym('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')', "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().tok == Tok::Sym('(') {
                    self.bump();
                    self.call(&tok, name)
                } else {
                    self.variable(&tok, name)
                }
            }
            _ => Err(self.unexpected(&["number", "identifier", "`(`", "`-`"])),
        }
    }

    fn variable(&self, tok: &Token, name: &str) -> Result<Expr, ParseError> {
        Ok(match name {
            "t" => Expr::Var(Var::T),
            "r" => Expr::Var(Var::R),
            "s" => Expr::Var(Var::S),
            "u" => Expr::Var(Var::U(1)),
            _ => {
                if let Some(j) = indexed(name, 'u') {
                    Expr::Var(Var::U(j))
                } else if let Some(j) = indexed(name, 'd') {
                    Expr::Var(Var::D(j))
                } else if let Some(i) = state_index(name) {
                    Expr::Bare(i)
                } else {
                    return Err(self.err_at(tok, ParseErrorKind::UnknownIdentifier(name.into())));
                }
            }
        })
    }

    /// Comma-separated arguments up to and including `)`.
    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        if self.peek().tok == Tok::Sym(')') {
            self.bump();
            return Ok(out);
        }
        loop {
            if matches!(self.peek().tok, Tok::End) {
                return Err(self.unexpected(&["argument"]));
            }
            out.push(self.expr()?);
            if self.eat(',') {
                continue;
            }
            self.expect(')', "`,` or `)`")?;
            return Ok(out);
        }
    }

    fn call(&mut self, tok: &Token, name: &str) -> Result<Expr, ParseError> {
        let args = self.args()?;
        let arity = |n: usize| -> Result<(), ParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(self.err_at(
                    tok,
                    ParseErrorKind::Arity { name: name.into(), expected: n, got: args.len() },
                ))
            }
        };
        let bad = |reason: &str| {
            self.err_at(tok, ParseErrorKind::BadArgument { name: name.into(), reason: reason.into() })
        };
        if let Some(i) = state_index(name) {
            arity(1)?;
            return match args[0] {
                Expr::Num(0.0) => Ok(Expr::Access(i)),
                _ => Err(bad("only x_i(0) is supported; use delay(x_i, tau)")),
            };
        }
        if let Some(f) = Func::from_name(name) {
            arity(1)?;
            return Ok(Expr::Call(f, Box::new(args.into_iter().next().expect("arity"))));
        }
        let mut it = args.clone().into_iter();
        match name {
            "pow" => {
                arity(2)?;
                let (a, b) = (it.next().expect("arity"), it.next().expect("arity"));
                Ok(Expr::bin(BinOp::Pow, a, b))
            }
            "delay" => {
                arity(2)?;
                let Some(Expr::Bare(i)) = it.next() else {
                    return Err(bad("first argument must be a state component x_i"));
                };
                Ok(Expr::Delay(i, Box::new(it.next().expect("arity"))))
            }
            "norm_r" => {
                arity(1)?;
                match args[0] {
                    Expr::Bare(i) => Ok(Expr::Norm(i)),
                    _ => Err(bad("argument must be a state component x_i")),
                }
            }
            "integral" => {
                arity(2)?;
                let integrand = it.next().expect("arity");
                let window = it.next().expect("arity");
                let mut comps = Vec::new();
                let mut history = false;
                integrand.walk(&mut |e| match e {
                    Expr::Bare(i) => comps.push(*i),
                    Expr::Access(_) | Expr::Delay(..) | Expr::Norm(_) | Expr::Integral { .. } => {
                        history = true
                    }
                    _ => {}
                });
                comps.dedup();
                if history || comps.len() != 1 || comps.iter().any(|&c| c != comps[0]) {
                    return Err(bad("integrand must depend on exactly one bare component x_i"));
                }
                Ok(Expr::Integral { integrand: Box::new(integrand), component: comps[0], window: Box::new(window) })
            }
            _ => Err(self.err_at(tok, ParseErrorKind::UnknownIdentifier(name.into()))),
        }
    }
}
