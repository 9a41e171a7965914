//! Arithmetic expressions over `t`, `x1..xd`, `u1..um`, `v1..vk`.
//!
//! Grammar (standard precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `-x1^2` parses as `-(x1^2)`. Literals produced by the parser are always
//! non-negative; a leading minus is a [`Expr::Neg`] node.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// A variable slot. Indices are zero-based; `x1` is `X(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    T,
    X(usize),
    U(usize),
    V(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => f.write_str("t"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::V(i) => write!(f, "v{}", i + 1),
        }
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Min,
    Max,
    Sqrt,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Declared variable dimensions: state `d`, U-action `m`, V-action `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub d: usize,
    pub m: usize,
    pub k: usize,
}

impl Scope {
    pub fn new(d: usize, m: usize, k: usize) -> Self {
        Scope { d, m, k }
    }

    pub fn contains(&self, var: Var) -> bool {
        match var {
            Var::T => true,
            Var::X(i) => i < self.d,
            Var::U(i) => i < self.m,
            Var::V(i) => i < self.k,
        }
    }
}

/// Evaluation point with positional bindings.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub v: &'a [f64],
}

/// Marker for a non-finite intermediate result on the fast path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFinite;

#[inline]
fn finite(x: f64) -> core::result::Result<f64, NonFinite> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(NonFinite)
    }
}

impl Expr {
    /// Positional evaluation. Every intermediate must be finite, so `min(1/x1, 2)`
    /// at `x1 = 0` is a fault rather than `2`.
    pub fn eval(&self, env: &Env<'_>) -> core::result::Result<f64, NonFinite> {
        self.eval_by(&|var| {
            Some(match var {
                Var::T => env.t,
                Var::X(i) => env.x[i],
                Var::U(i) => env.u[i],
                Var::V(i) => env.v[i],
            })
        })
        .map_err(|_| NonFinite)
    }

    /// Evaluation against a name→value map, e.g. `{"x1": 3.0, "t": 2.0}`.
    pub fn eval_bindings(&self, bindings: &BTreeMap<String, f64>) -> Result<f64> {
        let lookup = |var: Var| bindings.get(var.to_string().as_str()).copied();
        match self.eval_by(&lookup) {
            Ok(value) => Ok(value),
            Err(EvalErr::Unbound(var)) => Err(Error::UnboundVariable(var.to_string())),
            Err(EvalErr::NonFinite) => {
                let mut point = String::new();
                for (k, v) in bindings {
                    if !point.is_empty() {
                        point.push_str(", ");
                    }
                    point.push_str(&format!("{k}={v}"));
                }
                Err(Error::EvalFault {
                    expr: self.to_string(),
                    point,
                })
            }
        }
    }

    fn eval_by<F: Fn(Var) -> Option<f64>>(&self, lookup: &F) -> core::result::Result<f64, EvalErr> {
        let value = match self {
            Expr::Num(n) => *n,
            Expr::Var(var) => lookup(*var).ok_or(EvalErr::Unbound(*var))?,
            Expr::Neg(e) => -e.eval_by(lookup)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval_by(lookup)?;
                let b = r.eval_by(lookup)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval_by(lookup)?;
                match func {
                    Func::Sin => libm::sin(a),
                    Func::Cos => libm::cos(a),
                    Func::Exp => libm::exp(a),
                    Func::Abs => libm::fabs(a),
                    Func::Sqrt => libm::sqrt(a),
                    Func::Tanh => libm::tanh(a),
                    Func::Min => a.min(args[1].eval_by(lookup)?),
                    Func::Max => a.max(args[1].eval_by(lookup)?),
                }
            }
        };
        finite(value).map_err(|_| EvalErr::NonFinite)
    }

    /// Calls `f` on every variable reference.
    pub fn visit_vars<F: FnMut(Var)>(&self, f: &mut F) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(e) => e.visit_vars(f),
            Expr::Bin(_, l, r) => {
                l.visit_vars(f);
                r.visit_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }

    pub fn any_var<P: Fn(Var) -> bool>(&self, pred: P) -> bool {
        let mut hit = false;
        self.visit_vars(&mut |v| hit |= pred(v));
        hit
    }

    pub fn uses_time(&self) -> bool {
        self.any_var(|v| v == Var::T)
    }

    pub fn uses_state(&self) -> bool {
        self.any_var(|v| matches!(v, Var::X(_)))
    }

    pub fn uses_u(&self) -> bool {
        self.any_var(|v| matches!(v, Var::U(_)))
    }

    pub fn uses_v(&self) -> bool {
        self.any_var(|v| matches!(v, Var::V(_)))
    }

    /// First variable outside `scope`, if any.
    pub fn undeclared(&self, scope: &Scope) -> Option<Var> {
        let mut found = None;
        self.visit_vars(&mut |v| {
            if found.is_none() && !scope.contains(v) {
                found = Some(v);
            }
        });
        found
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

enum EvalErr {
    Unbound(Var),
    NonFinite,
}

fn pow(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b == libm::trunc(b) && libm::fabs(b) <= 64.0 {
        powi(a, b as i32)
    } else {
        libm::pow(a, b)
    }
}

fn powi(a: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / a } else { a };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

struct Paren<'a>(&'a Expr, bool);

impl fmt::Display for Paren<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) if n.is_sign_negative() => write!(f, "({n})"),
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "-{}", Paren(e, e.precedence() < 3)),
            Expr::Bin(op, l, r) => {
                let (sym, lp, rp) = match op {
                    BinOp::Add => ("+", l.precedence() < 1, r.precedence() <= 1),
                    BinOp::Sub => ("-", l.precedence() < 1, r.precedence() <= 1),
                    BinOp::Mul => ("*", l.precedence() < 2, r.precedence() <= 2),
                    BinOp::Div => ("/", l.precedence() < 2, r.precedence() <= 2),
                    BinOp::Pow => ("^", l.precedence() < 5, r.precedence() < 3),
                };
                if *op == BinOp::Pow {
                    write!(f, "{}^{}", Paren(l, lp), Paren(r, rp))
                } else {
                    write!(f, "{} {} {}", Paren(l, lp), sym, Paren(r, rp))
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses `src` against the declared variable `scope`.
pub fn parse_expression(src: &str, scope: &Scope) -> Result<Expr> {
    let mut p = Parser {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        scope,
    };
    p.skip_ws();
    if p.pos == p.bytes.len() {
        return Err(p.syntax("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    scope: &'a Scope,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mut q = self.pos + 1;
            if q < b.len() && (b[q] == b'+' || b[q] == b'-') {
                q += 1;
            }
            if q < b.len() && b[q].is_ascii_digit() {
                while q < b.len() && b[q].is_ascii_digit() {
                    q += 1;
                }
                self.pos = q;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Expr::Num(n)),
            _ => Err(Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            }),
        }
    }

    fn identifier(&mut self) -> Result<Expr> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let call = self.peek() == Some(b'(');
        if let Some(func) = Func::from_name(name) {
            if !call {
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("function `{name}` requires parenthesised arguments"),
                });
            }
            self.pos += 1;
            let mut args = Vec::new();
            if self.peek() != Some(b')') {
                loop {
                    args.push(self.expr()?);
                    if !self.eat(b',') {
                        break;
                    }
                }
            }
            if !self.eat(b')') {
                return Err(self.syntax("expected `)` or `,`"));
            }
            if args.len() != func.arity() {
                return Err(Error::Arity {
                    name: name.to_string(),
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        match variable(name) {
            Some(var) if !call && self.scope.contains(var) => Ok(Expr::Var(var)),
            _ => Err(Error::UnknownIdentifier {
                name: name.to_string(),
                offset: start,
            }),
        }
    }
}

fn variable(name: &str) -> Option<Var> {
    if name == "t" {
        return Some(Var::T);
    }
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let idx = digits.parse::<usize>().ok()?.checked_sub(1)?;
    match head {
        "x" => Some(Var::X(idx)),
        "u" => Some(Var::U(idx)),
        "v" => Some(Var::V(idx)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scope() -> Scope {
        Scope::new(2, 1, 1)
    }

    fn eval_at(src: &str, pairs: &[(&str, f64)]) -> Result<f64> {
        let e = parse_expression(src, &scope())?;
        let map: BTreeMap<String, f64> = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        e.eval_bindings(&map)
    }

    #[test]
    fn documented_evaluations() {
        assert_eq!(eval_at("u1 + v1", &[("u1", 0.5), ("v1", -0.5)]).unwrap(), 0.0);
        assert_eq!(eval_at("0.5*x1^2", &[("x1", 2.0)]).unwrap(), 2.0);
        assert_eq!(eval_at("cos(x1)", &[("x1", 0.0)]).unwrap(), 1.0);
        assert_eq!(eval_at("x1*t", &[("x1", 3.0), ("t", 2.0)]).unwrap(), 6.0);
        assert_eq!(eval_at("min(u1, v1)", &[("u1", 1.0), ("v1", -1.0)]).unwrap(), -1.0);
    }

    #[test]
    fn division_by_zero_is_a_fault() {
        let err = eval_at("1/x1", &[("x1", 0.0)]).unwrap_err();
        assert!(matches!(err, Error::EvalFault { .. }), "{err}");
        // hidden by min() but still reported
        assert!(eval_at("min(1/x1, 2)", &[("x1", 0.0)]).is_err());
    }

    #[test]
    fn unbound_variable() {
        let err = eval_at("x1 + x2", &[("x1", 1.0)]).unwrap_err();
        assert_eq!(err, Error::UnboundVariable("x2".into()));
    }

    #[test]
    fn precedence() {
        assert_eq!(eval_at("-x1^2", &[("x1", 3.0)]).unwrap(), -9.0);
        assert_eq!(eval_at("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval_at("2^-1", &[]).unwrap(), 0.5);
        assert_eq!(eval_at("1 - 2 - 3", &[]).unwrap(), -4.0);
        assert_eq!(eval_at("8 / 4 / 2", &[]).unwrap(), 1.0);
        assert_eq!(eval_at("1 + 2 * 3", &[]).unwrap(), 7.0);
        assert_eq!(eval_at("(1 + 2) * 3", &[]).unwrap(), 9.0);
        assert_eq!(eval_at("1.5e1 + .5", &[]).unwrap(), 15.5);
    }

    #[test]
    fn parse_errors() {
        let s = scope();
        assert!(matches!(
            parse_expression("x1 +", &s),
            Err(Error::Syntax { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expression("x3", &s),
            Err(Error::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expression("1 + foo(2)", &s),
            Err(Error::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse_expression("min(1)", &s),
            Err(Error::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(parse_expression("sin x1", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expression("", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expression("(x1", &s), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expression("x1 x2", &s), Err(Error::Syntax { .. })));
        assert!(matches!(
            parse_expression("x0", &s),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn printing_guards_structure() {
        let s = scope();
        for src in [
            "-(x1 + 1)",
            "(-x1)^2",
            "(x1^2)^3",
            "x1 - (x2 - 1)",
            "x1 / (x2 * 2)",
            "-x1^2",
            "max(x1, -t)",
        ] {
            let e = parse_expression(src, &s).unwrap();
            let again = parse_expression(&e.to_string(), &s).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
        let e = Expr::Bin(BinOp::Add, Box::new(Expr::Num(1.0)), Box::new(Expr::Num(-2.0)));
        assert_eq!(e.to_string(), "1 + (-2)");
    }

    #[test]
    fn variable_queries() {
        let e = parse_expression("u1*x2 + t", &scope()).unwrap();
        assert!(e.uses_time() && e.uses_u() && e.uses_state() && !e.uses_v());
        assert_eq!(e.undeclared(&Scope::new(1, 1, 0)), Some(Var::X(1)));
        let mut seen = vec![];
        e.visit_vars(&mut |v| seen.push(v));
        assert_eq!(seen, vec![Var::U(0), Var::X(1), Var::T]);
    }
}
