//! Symbolic expressions: parsing, interval/point evaluation and symbolic
//! differentiation.
//!
//! Expressions are trees over `+ - * /`, integer powers and the primitives
//! `exp log sin cos sqrt abs`. For repeated evaluation they are compiled into
//! a [`Tape`], a flat instruction list with shared subexpressions merged and
//! variables resolved to slot indices.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::interval::{Interval, IntervalError, IntervalBox};
use crate::lexer::{tokenize, Tok, Token};

/// Default node-count cap for derived expressions.
pub const DEFAULT_NODE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply_interval(self, x: Interval) -> Result<Interval, IntervalError> {
        match self {
            Func::Exp => Ok(x.exp()),
            Func::Log => x.ln(),
            Func::Sin => Ok(x.sin()),
            Func::Cos => Ok(x.cos()),
            Func::Sqrt => x.sqrt(),
            Func::Abs => Ok(x.abs()),
        }
    }

    fn apply_f64(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// The constant pi, evaluated as a tight enclosure.
    Pi,
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Parse {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error("`{0}` is not differentiable")]
    NonDifferentiable(&'static str),
    #[error("expression exceeds node cap of {0}")]
    NodeCap(usize),
}

/// Parses an expression under standard precedence
/// (`^` > unary `-` > `* /` > `+ -`, binary operators left-associative).
pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(text, false).map_err(|e| ExprError::Parse {
        offset: e.offset,
        expected: vec!["a valid token".into()],
        found: e.message,
    })?;
    let mut p = ExprParser::new(&toks, text.len());
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.error(&["operator", "end of input"]));
    }
    Ok(e)
}

/// Recursive-descent expression parser over a token slice. The model parser
/// embeds it and continues from `pos` afterwards.
pub(crate) struct ExprParser<'a> {
    toks: &'a [Token],
    pub(crate) pos: usize,
    end_offset: usize,
}

impl<'a> ExprParser<'a> {
    pub(crate) fn new(toks: &'a [Token], end_offset: usize) -> Self {
        ExprParser {
            toks,
            pos: 0,
            end_offset,
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub(crate) fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    pub(crate) fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    pub(crate) fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.offset)
            .unwrap_or(self.end_offset)
    }

    pub(crate) fn bump(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    pub(crate) fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, tok: &Tok) -> Result<(), ExprError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(&[&tok.to_string()]))
        }
    }

    pub(crate) fn error(&self, expected: &[&str]) -> ExprError {
        ExprError::Parse {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self
                .peek()
                .map(|t| t.to_string())
                .unwrap_or_else(|| "end of input".into()),
        }
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat(&Tok::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if !self.eat(&Tok::Caret) {
            return Ok(base);
        }
        let exponent = self.unary()?;
        Ok(make_power(base, exponent))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Expr::Const(x))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or_else(|| ExprError::Parse {
                        offset: self.toks[self.pos - 1].offset,
                        expected: vec!["a known function (exp, log, sin, cos, sqrt, abs)".into()],
                        found: format!("`{name}`"),
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(&Tok::RParen)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                Ok(Expr::Var(name))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.error(&["number", "identifier", "`(`", "`-`"])),
        }
    }
}

/// `base ^ exponent`: integer constant exponents become [`Expr::Pow`],
/// anything else is rewritten as `exp(exponent * log(base))`.
fn make_power(base: Expr, exponent: Expr) -> Expr {
    if let Some(c) = exponent.as_const() {
        if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
            return Expr::Pow(Box::new(base), c as i32);
        }
    }
    Expr::Call(
        Func::Exp,
        Box::new(Expr::Mul(
            Box::new(exponent),
            Box::new(Expr::Call(Func::Log, Box::new(base))),
        )),
    )
}

// Exact constant folding: fold only when the f64 result carries no rounding.
fn exact(lo: f64, hi: f64) -> Option<f64> {
    (lo == hi && lo.is_finite()).then_some(lo)
}

fn fold_add(a: f64, b: f64) -> Option<f64> {
    exact(crate::interval::add_down(a, b), crate::interval::add_up(a, b))
}

fn fold_sub(a: f64, b: f64) -> Option<f64> {
    exact(crate::interval::sub_down(a, b), crate::interval::sub_up(a, b))
}

fn fold_mul(a: f64, b: f64) -> Option<f64> {
    exact(crate::interval::mul_down(a, b), crate::interval::mul_up(a, b))
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Neg(e) => e.as_const().map(|c| -c),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Pi | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Names of the free variables, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Const(_) | Expr::Pi => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Var(v) => v == name,
            Expr::Const(_) | Expr::Pi => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.mentions(name),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.mentions(name) || b.mentions(name)
            }
        }
    }

    /// Replaces every occurrence of the variables in `map` by the mapped expression.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        match self {
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Const(_) | Expr::Pi => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(map))),
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.substitute(map)), *n),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(map))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
        }
    }

    /// Interval extension over a named box.
    pub fn eval_interval(&self, env: &IntervalBox) -> Result<Interval, ExprError> {
        Ok(match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Pi => Interval::PI,
            Expr::Var(v) => env
                .get(v)
                .ok_or_else(|| ExprError::UnboundVariable(v.clone()))?,
            Expr::Neg(a) => -a.eval_interval(env)?,
            Expr::Add(a, b) => a.eval_interval(env)? + b.eval_interval(env)?,
            Expr::Sub(a, b) => a.eval_interval(env)? - b.eval_interval(env)?,
            Expr::Mul(a, b) => {
                if a == b {
                    a.eval_interval(env)?.sqr()
                } else {
                    a.eval_interval(env)? * b.eval_interval(env)?
                }
            }
            Expr::Div(a, b) => a.eval_interval(env)?.checked_div(&b.eval_interval(env)?)?,
            Expr::Pow(a, n) => a.eval_interval(env)?.powi(*n)?,
            Expr::Call(f, a) => f.apply_interval(a.eval_interval(env)?)?,
        })
    }

    /// Plain floating-point evaluation; `lookup` resolves variables.
    pub fn eval_f64(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => lookup(v).ok_or_else(|| ExprError::UnboundVariable(v.clone()))?,
            Expr::Neg(a) => -a.eval_f64(lookup)?,
            Expr::Add(a, b) => a.eval_f64(lookup)? + b.eval_f64(lookup)?,
            Expr::Sub(a, b) => a.eval_f64(lookup)? - b.eval_f64(lookup)?,
            Expr::Mul(a, b) => a.eval_f64(lookup)? * b.eval_f64(lookup)?,
            Expr::Div(a, b) => a.eval_f64(lookup)? / b.eval_f64(lookup)?,
            Expr::Pow(a, n) => a.eval_f64(lookup)?.powi(*n),
            Expr::Call(f, a) => f.apply_f64(a.eval_f64(lookup)?),
        })
    }

    /// Symbolic derivative with respect to `var`, simplified.
    pub fn differentiate(&self, var: &str) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Const(_) | Expr::Pi => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(var)?),
            Expr::Add(a, b) => add(a.differentiate(var)?, b.differentiate(var)?),
            Expr::Sub(a, b) => sub(a.differentiate(var)?, b.differentiate(var)?),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(var)?, (**b).clone()),
                mul((**a).clone(), b.differentiate(var)?),
            ),
            Expr::Div(a, b) => {
                let da = a.differentiate(var)?;
                let db = b.differentiate(var)?;
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(a, n) => {
                let da = a.differentiate(var)?;
                match *n {
                    0 => Expr::Const(0.0),
                    1 => da,
                    _ => mul(
                        mul(Expr::Const(*n as f64), pow((**a).clone(), n - 1)),
                        da,
                    ),
                }
            }
            Expr::Call(f, a) => {
                let da = a.differentiate(var)?;
                if da.is_zero() {
                    return Ok(Expr::Const(0.0));
                }
                let a = (**a).clone();
                match f {
                    Func::Exp => mul(call(Func::Exp, a), da),
                    Func::Log => div(da, a),
                    Func::Sin => mul(call(Func::Cos, a), da),
                    Func::Cos => neg(mul(call(Func::Sin, a), da)),
                    Func::Sqrt => div(da, mul(Expr::Const(2.0), call(Func::Sqrt, a))),
                    Func::Abs => return Err(ExprError::NonDifferentiable("abs")),
                }
            }
        })
    }

    /// The `n`-th derivative, simplifying between steps. Fails with
    /// [`ExprError::NodeCap`] once an intermediate result exceeds `cap` nodes.
    pub fn nth_derivative(&self, var: &str, n: usize, cap: usize) -> Result<Expr, ExprError> {
        let mut e = self.simplify();
        for _ in 0..n {
            e = e.differentiate(var)?;
            if e.size() > cap {
                return Err(ExprError::NodeCap(cap));
            }
        }
        Ok(e)
    }

    /// Best-effort simplification: exact constant folding and additive /
    /// multiplicative identities.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Pi | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => neg(a.simplify()),
            Expr::Add(a, b) => add(a.simplify(), b.simplify()),
            Expr::Sub(a, b) => sub(a.simplify(), b.simplify()),
            Expr::Mul(a, b) => mul(a.simplify(), b.simplify()),
            Expr::Div(a, b) => div(a.simplify(), b.simplify()),
            Expr::Pow(a, n) => pow(a.simplify(), *n),
            Expr::Call(f, a) => call(*f, a.simplify()),
        }
    }
}

// Smart constructors used by differentiation and simplification.

pub(crate) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        return b;
    }
    if b.is_zero() {
        return a;
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(s) = fold_add(x, y) {
            return Expr::Const(s);
        }
    }
    if let Expr::Neg(nb) = b {
        return sub(a, *nb);
    }
    Expr::Add(Box::new(a), Box::new(b))
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    if b.is_zero() {
        return a;
    }
    if a.is_zero() {
        return neg(b);
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(s) = fold_sub(x, y) {
            return Expr::Const(s);
        }
    }
    if a == b {
        return Expr::Const(0.0);
    }
    if let Expr::Neg(nb) = b {
        return add(a, *nb);
    }
    Expr::Sub(Box::new(a), Box::new(b))
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        return Expr::Const(0.0);
    }
    if a.is_one() {
        return b;
    }
    if b.is_one() {
        return a;
    }
    if a.as_const() == Some(-1.0) {
        return neg(b);
    }
    if b.as_const() == Some(-1.0) {
        return neg(a);
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(p) = fold_mul(x, y) {
            return Expr::Const(p);
        }
    }
    match (a, b) {
        (Expr::Neg(x), Expr::Neg(y)) => mul(*x, *y),
        (Expr::Neg(x), y) => neg(mul(*x, y)),
        (x, Expr::Neg(y)) => neg(mul(x, *y)),
        // keep constants on the left and merge c1 * (c2 * e)
        (x, y) if y.as_const().is_some() && x.as_const().is_none() => mul(y, x),
        (Expr::Const(c1), Expr::Mul(inner_a, inner_b)) => match inner_a.as_const() {
            Some(c2) => match fold_mul(c1, c2) {
                Some(p) => mul(Expr::Const(p), *inner_b),
                None => Expr::Mul(
                    Box::new(Expr::Const(c1)),
                    Box::new(Expr::Mul(inner_a, inner_b)),
                ),
            },
            None => Expr::Mul(
                Box::new(Expr::Const(c1)),
                Box::new(Expr::Mul(inner_a, inner_b)),
            ),
        },
        (x, y) if x == y => pow(x, 2),
        (x, y) => Expr::Mul(Box::new(x), Box::new(y)),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        return Expr::Const(0.0);
    }
    if b.is_one() {
        return a;
    }
    if a == b {
        return Expr::Const(1.0);
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if y != 0.0 {
            let q = x / y;
            if q.is_finite() && q * y == x && x.mul_add(1.0, -(q * y)) == 0.0 && (-q).mul_add(y, x) == 0.0 {
                return Expr::Const(q);
            }
        }
    }
    match (a, b) {
        (Expr::Neg(x), y) => neg(div(*x, y)),
        (x, y) => Expr::Div(Box::new(x), Box::new(y)),
    }
}

pub(crate) fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => return Expr::Const(1.0),
        1 => return a,
        _ => {}
    }
    if let Some(c) = a.as_const() {
        if n > 0 {
            let mut acc = Some(1.0);
            for _ in 0..n {
                acc = acc.and_then(|v| fold_mul(v, c));
            }
            if let Some(v) = acc {
                return Expr::Const(v);
            }
        }
    }
    match a {
        Expr::Pow(inner, m) => match m.checked_mul(n) {
            Some(k) => pow(*inner, k),
            None => Expr::Pow(Box::new(Expr::Pow(inner, m)), n),
        },
        a => Expr::Pow(Box::new(a), n),
    }
}

pub(crate) fn call(f: Func, a: Expr) -> Expr {
    if let (Func::Exp, Some(c)) = (f, a.as_const()) {
        if c == 0.0 {
            return Expr::Const(1.0);
        }
    }
    Expr::Call(f, Box::new(a))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Pi => write!(f, "pi"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => {
                if *n < 0 {
                    write!(f, "({a}^({n}))")
                } else {
                    write!(f, "({a}^{n})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Instr {
    Const(u64),
    Pi,
    Var(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Sqr(usize),
    Div(usize, usize),
    Pow(usize, i32),
    Call(Func, usize),
}

/// Compiled form of one or more expressions sharing a variable layout.
///
/// Identical subtrees are evaluated once. Outputs are read back by index.
#[derive(Debug, Clone)]
pub struct Tape {
    instrs: Vec<Instr>,
    outputs: Vec<usize>,
    n_vars: usize,
}

impl Tape {
    /// Compiles a single expression against the variable order `vars`.
    pub fn compile(expr: &Expr, vars: &[String]) -> Result<Tape, ExprError> {
        Tape::compile_many(std::slice::from_ref(expr), vars)
    }

    pub fn compile_many(exprs: &[Expr], vars: &[String]) -> Result<Tape, ExprError> {
        let index: HashMap<&str, usize> = vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let mut b = TapeBuilder {
            instrs: Vec::new(),
            memo: HashMap::new(),
            index: &index,
        };
        let outputs = exprs
            .iter()
            .map(|e| b.emit(e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tape {
            instrs: b.instrs,
            outputs,
            n_vars: vars.len(),
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Interval evaluation of every output.
    pub fn eval(&self, vars: &[Interval]) -> Result<Vec<Interval>, IntervalError> {
        debug_assert_eq!(vars.len(), self.n_vars);
        let mut slots: Vec<Interval> = Vec::with_capacity(self.instrs.len());
        for ins in &self.instrs {
            let v = match *ins {
                Instr::Const(bits) => Interval::point(f64::from_bits(bits)),
                Instr::Pi => Interval::PI,
                Instr::Var(i) => vars[i],
                Instr::Neg(a) => -slots[a],
                Instr::Add(a, b) => slots[a] + slots[b],
                Instr::Sub(a, b) => slots[a] - slots[b],
                Instr::Mul(a, b) => slots[a] * slots[b],
                Instr::Sqr(a) => slots[a].sqr(),
                Instr::Div(a, b) => slots[a].checked_div(&slots[b])?,
                Instr::Pow(a, n) => slots[a].powi(n)?,
                Instr::Call(f, a) => f.apply_interval(slots[a])?,
            };
            slots.push(v);
        }
        Ok(self.outputs.iter().map(|&o| slots[o]).collect())
    }

    /// Interval evaluation of the first output.
    pub fn eval1(&self, vars: &[Interval]) -> Result<Interval, IntervalError> {
        self.eval(vars).map(|v| v[0])
    }

    pub fn eval_f64(&self, vars: &[f64]) -> Vec<f64> {
        let mut slots = Vec::with_capacity(self.instrs.len());
        let mut out = Vec::with_capacity(self.outputs.len());
        self.eval_f64_into(vars, &mut slots, &mut out);
        out
    }

    /// As [`Tape::eval_f64`], reusing `slots` as scratch and writing the
    /// outputs to `out`.
    pub fn eval_f64_into(&self, vars: &[f64], slots: &mut Vec<f64>, out: &mut Vec<f64>) {
        slots.clear();
        for ins in &self.instrs {
            let v = match *ins {
                Instr::Const(bits) => f64::from_bits(bits),
                Instr::Pi => std::f64::consts::PI,
                Instr::Var(i) => vars[i],
                Instr::Neg(a) => -slots[a],
                Instr::Add(a, b) => slots[a] + slots[b],
                Instr::Sub(a, b) => slots[a] - slots[b],
                Instr::Mul(a, b) => slots[a] * slots[b],
                Instr::Sqr(a) => slots[a] * slots[a],
                Instr::Div(a, b) => slots[a] / slots[b],
                Instr::Pow(a, n) => slots[a].powi(n),
                Instr::Call(f, a) => f.apply_f64(slots[a]),
            };
            slots.push(v);
        }
        out.clear();
        out.extend(self.outputs.iter().map(|&o| slots[o]));
    }

    pub fn eval1_f64(&self, vars: &[f64]) -> f64 {
        self.eval_f64(vars)[0]
    }
}

struct TapeBuilder<'a> {
    instrs: Vec<Instr>,
    memo: HashMap<Instr, usize>,
    index: &'a HashMap<&'a str, usize>,
}

impl TapeBuilder<'_> {
    fn push(&mut self, ins: Instr) -> usize {
        if let Some(&slot) = self.memo.get(&ins) {
            return slot;
        }
        let slot = self.instrs.len();
        self.instrs.push(ins);
        self.memo.insert(ins, slot);
        slot
    }

    fn emit(&mut self, e: &Expr) -> Result<usize, ExprError> {
        let ins = match e {
            Expr::Const(c) => Instr::Const(c.to_bits()),
            Expr::Pi => Instr::Pi,
            Expr::Var(v) => Instr::Var(
                *self
                    .index
                    .get(v.as_str())
                    .ok_or_else(|| ExprError::UnboundVariable(v.clone()))?,
            ),
            Expr::Neg(a) => Instr::Neg(self.emit(a)?),
            Expr::Add(a, b) => Instr::Add(self.emit(a)?, self.emit(b)?),
            Expr::Sub(a, b) => Instr::Sub(self.emit(a)?, self.emit(b)?),
            Expr::Mul(a, b) => {
                let (x, y) = (self.emit(a)?, self.emit(b)?);
                if x == y {
                    Instr::Sqr(x)
                } else {
                    Instr::Mul(x, y)
                }
            }
            Expr::Div(a, b) => Instr::Div(self.emit(a)?, self.emit(b)?),
            Expr::Pow(a, n) => {
                let x = self.emit(a)?;
                if *n == 2 {
                    Instr::Sqr(x)
                } else {
                    Instr::Pow(x, *n)
                }
            }
            Expr::Call(f, a) => Instr::Call(*f, self.emit(a)?),
        };
        Ok(self.push(ins))
    }
}
