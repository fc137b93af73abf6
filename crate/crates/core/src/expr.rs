//! Expressions: L-monomials, formulas, parsing, evaluation and complexity.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::dd::Dd;
use thiserror::Error;

/// Scalar type usable for formula evaluation.
pub trait Real:
    Copy
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Real for Dd {
    fn from_f64(x: f64) -> Self {
        Dd::new(x)
    }
    fn to_f64(self) -> f64 {
        Dd::to_f64(self)
    }
    fn sqrt(self) -> Self {
        Dd::sqrt(self)
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn abs(self) -> Self {
        Dd::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        Dd::powi(self, n)
    }
}

/// Coefficient of an L-monomial: either the fixed one or a free constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coeff {
    One,
    Free(f64),
}

impl Coeff {
    pub fn value(self) -> f64 {
        match self {
            Coeff::One => 1.0,
            Coeff::Free(h) => h,
        }
    }

    pub fn is_free(self) -> bool {
        matches!(self, Coeff::Free(_))
    }
}

/// `h * x1^a1 * ... * xn^an`.
#[derive(Clone, Debug, PartialEq)]
pub struct LMonomial {
    pub coeff: Coeff,
    pub powers: Vec<i32>,
}

impl LMonomial {
    pub fn new(coeff: Coeff, powers: Vec<i32>) -> Self {
        LMonomial { coeff, powers }
    }

    pub fn constant(c: f64, n: usize) -> Self {
        LMonomial { coeff: coeff_of(c), powers: vec![0; n] }
    }

    pub fn var(i: usize, n: usize) -> Self {
        let mut powers = vec![0; n];
        powers[i] = 1;
        LMonomial { coeff: Coeff::One, powers }
    }

    /// Checks the lattice bounds `|a_i| <= delta` and `sum |a_i| <= tau`.
    pub fn within(&self, delta: i32, tau: i32) -> bool {
        self.powers.iter().all(|a| a.abs() <= delta) && self.powers.iter().map(|a| a.abs()).sum::<i32>() <= tau
    }

    pub fn nonzero_powers(&self) -> usize {
        self.powers.iter().filter(|a| **a != 0).count()
    }

    pub fn eval<R: Real>(&self, x: &[R]) -> R {
        let mut v = R::from_f64(self.coeff.value());
        for (xi, &a) in x.iter().zip(&self.powers) {
            if a != 0 {
                v = v * xi.powi(a);
            }
        }
        v
    }

    fn is_unit(&self) -> bool {
        self.coeff == Coeff::One && self.powers.iter().all(|a| *a == 0)
    }

    fn render(&self, names: &[String]) -> String {
        let mut parts = Vec::new();
        let factors: Vec<String> = self
            .powers
            .iter()
            .zip(names)
            .filter(|(a, _)| **a != 0)
            .map(|(a, name)| if *a == 1 { name.clone() } else { format!("{name}^{a}") })
            .collect();
        match self.coeff {
            Coeff::Free(h) => parts.push(format_number(h)),
            Coeff::One if factors.is_empty() => parts.push("1".to_string()),
            Coeff::One => {}
        }
        parts.extend(factors);
        parts.join("*")
    }
}

fn coeff_of(c: f64) -> Coeff {
    if c == 1.0 {
        Coeff::One
    } else {
        Coeff::Free(c)
    }
}

/// Shortest text that parses back to the same double.
pub fn format_number(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains('e') || s.len() <= 12 {
        return s;
    }
    let e = format!("{x:e}");
    if e.len() < s.len() {
        e
    } else {
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnOp {
    Sqrt,
    Exp,
    Log,
    Abs,
    /// Integer power of a compound subexpression; produced only by the parser.
    Powi(i32),
}

/// A fully instantiated expression tree over `n` variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Formula {
    Leaf(LMonomial),
    Unary(UnOp, Box<Formula>),
    Binary(BinOp, Box<Formula>, Box<Formula>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    DivideByZero,
    NegativeSqrt,
    NonPositiveLog,
    NonFinite,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainKind::DivideByZero => "divide-by-zero",
            DomainKind::NegativeSqrt => "sqrt of negative",
            DomainKind::NonPositiveLog => "log of non-positive",
            DomainKind::NonFinite => "non-finite value",
        };
        f.write_str(s)
    }
}

/// Evaluation left the domain; `node` is the pre-order index of the offending node.
#[derive(Clone, Copy, Debug, Error, PartialEq)]
#[error("domain error at node {node}: {kind}")]
pub struct DomainError {
    pub node: usize,
    pub kind: DomainKind,
}

impl Formula {
    pub fn leaf(m: LMonomial) -> Self {
        Formula::Leaf(m)
    }

    pub fn unary(op: UnOp, a: Formula) -> Self {
        Formula::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinOp, a: Formula, b: Formula) -> Self {
        Formula::Binary(op, Box::new(a), Box::new(b))
    }

    /// Number of variables the leaves are defined over.
    pub fn arity(&self) -> usize {
        match self {
            Formula::Leaf(m) => m.powers.len(),
            Formula::Unary(_, a) => a.arity(),
            Formula::Binary(_, a, _) => a.arity(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainError> {
        self.eval_real(x)
    }

    pub fn eval_real<R: Real>(&self, x: &[R]) -> Result<R, DomainError> {
        let mut idx = 0;
        let v = self.eval_at(x, &mut idx)?;
        if !v.is_finite() {
            return Err(DomainError { node: 0, kind: DomainKind::NonFinite });
        }
        Ok(v)
    }

    fn eval_at<R: Real>(&self, x: &[R], idx: &mut usize) -> Result<R, DomainError> {
        let me = *idx;
        *idx += 1;
        let err = |kind| DomainError { node: me, kind };
        let zero = R::from_f64(0.0);
        let v = match self {
            Formula::Leaf(m) => m.eval(x),
            Formula::Unary(op, a) => {
                let a = a.eval_at(x, idx)?;
                match op {
                    UnOp::Sqrt => {
                        if a < zero {
                            return Err(err(DomainKind::NegativeSqrt));
                        }
                        a.sqrt()
                    }
                    UnOp::Exp => a.exp(),
                    UnOp::Log => {
                        if !(a > zero) {
                            return Err(err(DomainKind::NonPositiveLog));
                        }
                        a.ln()
                    }
                    UnOp::Abs => a.abs(),
                    UnOp::Powi(k) => {
                        if *k < 0 && a == zero {
                            return Err(err(DomainKind::DivideByZero));
                        }
                        a.powi(*k)
                    }
                }
            }
            Formula::Binary(op, a, b) => {
                let a = a.eval_at(x, idx)?;
                let b = b.eval_at(x, idx)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == zero {
                            return Err(err(DomainKind::DivideByZero));
                        }
                        a / b
                    }
                }
            }
        };
        if !v.is_finite() {
            let kind = if matches!(self, Formula::Leaf(_)) { DomainKind::DivideByZero } else { DomainKind::NonFinite };
            return Err(err(kind));
        }
        Ok(v)
    }

    /// Internal nodes plus, per leaf, `1 + nonzero exponents + (1 if free constant)`.
    pub fn complexity(&self) -> usize {
        match self {
            Formula::Leaf(m) => 1 + m.nonzero_powers() + usize::from(m.coeff.is_free()),
            Formula::Unary(_, a) => 1 + a.complexity(),
            Formula::Binary(_, a, b) => 1 + a.complexity() + b.complexity(),
        }
    }

    pub fn leaves(&self) -> Vec<&LMonomial> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a LMonomial>) {
        match self {
            Formula::Leaf(m) => out.push(m),
            Formula::Unary(_, a) => a.collect_leaves(out),
            Formula::Binary(_, a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Leaf(_) => 0,
            Formula::Unary(_, a) => 1 + a.depth(),
            Formula::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Infix text that [`parse`] reads back to an equivalent formula.
    // Products rendered from a leaf need grouping when they sit under a binary operator.
    fn operand(&self, names: &[String]) -> String {
        let s = self.to_infix(names);
        match self {
            Formula::Leaf(_) if s.contains(['*', '/']) => format!("({s})"),
            _ => s,
        }
    }

    pub fn to_infix(&self, names: &[String]) -> String {
        match self {
            Formula::Leaf(m) => m.render(names),
            Formula::Unary(op, a) => {
                let inner = a.to_infix(names);
                let bare = match **a {
                    Formula::Binary(..) => &inner[1..inner.len() - 1],
                    _ => &inner,
                };
                match op {
                    UnOp::Sqrt => format!("sqrt({bare})"),
                    UnOp::Exp => format!("exp({bare})"),
                    UnOp::Log => format!("log({bare})"),
                    UnOp::Abs => format!("abs({bare})"),
                    UnOp::Powi(k) => format!("({inner})^{k}"),
                }
            }
            Formula::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                format!("({} {} {})", a.operand(names), sym, b.operand(names))
            }
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable '{name}' at {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("exponent {value} at {pos} is not an integer or half-integer in [-64, 64]")]
    Exponent { pos: usize, value: f64 },
}

/// Parses an infix expression over the given variable names.
pub fn parse(text: &str, variables: &[&str]) -> Result<Formula, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, vars: variables };
    let f = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn n(&self) -> usize {
        self.vars.len()
    }

    fn expr(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            acc = Formula::binary(op, acc, rhs);
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.factor()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = if c == b'*' { mul(acc, rhs) } else { div(acc, rhs) };
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Formula, ParseError> {
        let base = self.base()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let at = self.pos;
        let mut sign = 1.0;
        match self.peek() {
            Some(b'-') => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            _ => {}
        }
        self.skip_ws();
        let e = sign * self.number()?;
        let twice = 2.0 * e;
        if twice.fract() != 0.0 || e.abs() > 64.0 {
            return Err(ParseError::Exponent { pos: at, value: e });
        }
        let twice = twice as i32;
        Ok(if twice % 2 == 0 { pow(base, twice / 2) } else { Formula::unary(UnOp::Sqrt, pow(base, twice)) })
    }

    fn base(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                let b = self.factor()?;
                Ok(negate(b, self.n()))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(Formula::Leaf(LMonomial::constant(v, self.n())))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                let func = match name {
                    "sqrt" => Some(UnOp::Sqrt),
                    "abs" => Some(UnOp::Abs),
                    "exp" => Some(UnOp::Exp),
                    "log" => Some(UnOp::Log),
                    _ => None,
                };
                if let Some(op) = func {
                    if self.peek() == Some(b'(') && !self.vars.contains(&name) {
                        self.pos += 1;
                        let e = self.expr()?;
                        if self.peek() != Some(b')') {
                            return Err(self.syntax("expected ')'"));
                        }
                        self.pos += 1;
                        return Ok(Formula::unary(op, e));
                    }
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Formula::Leaf(LMonomial::var(i, self.n()))),
                    None => Err(ParseError::UnknownVariable { pos: start, name: name.to_string() }),
                }
            }
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap_or_default();
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(v)
            }
            Err(_) => Err(self.syntax("malformed number")),
        }
    }
}

fn mul(a: Formula, b: Formula) -> Formula {
    match (a, b) {
        (Formula::Leaf(x), Formula::Leaf(y)) => {
            let powers = x.powers.iter().zip(&y.powers).map(|(p, q)| p + q).collect();
            Formula::Leaf(LMonomial::new(coeff_of(x.coeff.value() * y.coeff.value()), powers))
        }
        (a, b) => Formula::binary(BinOp::Mul, a, b),
    }
}

fn div(a: Formula, b: Formula) -> Formula {
    match (a, b) {
        (Formula::Leaf(x), Formula::Leaf(y)) => {
            let powers = x.powers.iter().zip(&y.powers).map(|(p, q)| p - q).collect();
            Formula::Leaf(LMonomial::new(coeff_of(x.coeff.value() / y.coeff.value()), powers))
        }
        (a, b) => Formula::binary(BinOp::Div, a, b),
    }
}

fn pow(base: Formula, k: i32) -> Formula {
    match base {
        Formula::Leaf(m) => {
            let powers = m.powers.iter().map(|a| a * k).collect();
            Formula::Leaf(LMonomial::new(coeff_of(m.coeff.value().powi(k)), powers))
        }
        _ if k == 1 => base,
        other => Formula::unary(UnOp::Powi(k), other),
    }
}

fn negate(f: Formula, n: usize) -> Formula {
    match f {
        Formula::Leaf(m) => Formula::Leaf(LMonomial::new(coeff_of(-m.coeff.value()), m.powers)),
        other => Formula::binary(BinOp::Mul, Formula::Leaf(LMonomial::constant(-1.0, n)), other),
    }
}

/// True when the formula is the lone monomial `1`.
pub fn is_unit_leaf(f: &Formula) -> bool {
    matches!(f, Formula::Leaf(m) if m.is_unit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn monomial_eval() {
        let m = LMonomial::new(Coeff::Free(2.0), vec![1, -1]);
        assert_eq!(m.eval(&[3.0, 2.0]), 3.0);
    }

    #[test]
    fn sqrt_kepler_at_one() {
        let f = parse("sqrt(0.1319*d^3)", &["m1", "m2", "d"]).unwrap();
        let v = f.eval(&[1.0, 1.0, 1.0]).unwrap();
        assert!((v - 0.363180).abs() < 1e-6);
        match &f {
            Formula::Unary(UnOp::Sqrt, inner) => match inner.as_ref() {
                Formula::Leaf(m) => {
                    assert_eq!(m.powers, vec![0, 0, 3]);
                    assert_eq!(m.coeff, Coeff::Free(0.1319));
                }
                _ => panic!("expected leaf"),
            },
            _ => panic!("expected sqrt"),
        }
    }

    #[test]
    fn identity() {
        let f = parse("x", &["x"]).unwrap();
        assert_eq!(f.eval(&[4.5]).unwrap(), 4.5);
        assert_eq!(f.complexity(), 2);
    }

    #[test]
    fn langmuir_shape() {
        let f = parse("p/(0.00927*p+0.0759)", &["p"]).unwrap();
        assert_eq!(f.leaves().len(), 3);
        let g = parse(&f.to_infix(&names(&["p"])), &["p"]).unwrap();
        for i in 0..100 {
            let p = 0.01 + i as f64 * 1.37;
            assert_eq!(f.eval(&[p]).unwrap(), g.eval(&[p]).unwrap());
        }
    }

    #[test]
    fn divide_by_zero() {
        let f = parse("x/(x-x)", &["x"]).unwrap();
        let e = f.eval(&[1.0]).unwrap_err();
        assert_eq!(e.kind, DomainKind::DivideByZero);
        assert_eq!(e.node, 0);
        let g = parse("sqrt(x - 2)", &["x"]).unwrap();
        assert_eq!(g.eval(&[1.0]).unwrap_err().kind, DomainKind::NegativeSqrt);
        let h = parse("x^-1", &["x"]).unwrap();
        assert!(h.eval(&[0.0]).is_err());
    }

    #[test]
    fn complexity_rule() {
        let n = names(&["m1", "m2", "d"]);
        let f = Formula::unary(UnOp::Sqrt, Formula::Leaf(LMonomial::new(Coeff::Free(0.13), vec![0, 0, 3])));
        assert_eq!(f.complexity(), 4);
        let one = Formula::Leaf(LMonomial::constant(1.0, 3));
        assert_eq!(one.complexity(), 1);
        assert_eq!(one.to_infix(&n), "1");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("x + y", &["x"]), Err(ParseError::UnknownVariable { .. })));
        assert!(matches!(parse("x^0.3", &["x"]), Err(ParseError::Exponent { .. })));
        assert!(matches!(parse("(x + 1", &["x"]), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("x 1", &["x"]), Err(ParseError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn grammar_corners() {
        let f = parse("-x^2 + 1.9885e30*y - (x+y)^2 + x^1.5 + abs(-3)", &["x", "y"]).unwrap();
        let (x, y): (f64, f64) = (1.3, 2.0e-30);
        let want = -(x * x) + 1.9885e30 * y - (x + y) * (x + y) + x.powf(1.5) + 3.0;
        assert!((f.eval(&[x, y]).unwrap() - want).abs() < 1e-12);
        let g = parse("v^-2 - -v", &["v"]).unwrap();
        assert!((g.eval(&[2.0]).unwrap() - 2.25).abs() < 1e-15);
    }

    #[test]
    fn double_double_eval() {
        let f = parse("sqrt(1 - v^2/9e16) - 1", &["v"]).unwrap();
        let v = Dd::new(36.0);
        let got = f.eval_real(&[v]).unwrap().to_f64();
        let x = 36.0f64 * 36.0 / 9e16;
        let want = -x / (1.0 + (1.0 - x).sqrt());
        assert!(((got - want) / want).abs() < 1e-14);
    }
}
