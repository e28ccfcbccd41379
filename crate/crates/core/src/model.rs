//! The hybrid-system data model and its text format.
//!
//! See `docs/format.md` for the grammar. Parsing runs in three stages:
//! tokenizing, `#define` expansion on the token stream, then a
//! recursive-descent pass that builds a [`Model`] and cross-checks names.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::expr::{Expr, ExprError, ExprParser};
use crate::interval::{Interval, IntervalBox};
use crate::lexer::{tokenize, Tok, Token};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parse error at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Parse {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("semantic error: {0}")]
    Semantic(String),
}

impl ModelError {
    /// One-based line and column of a parse error within `text`.
    pub fn location(&self, text: &str) -> Option<(usize, usize)> {
        match self {
            ModelError::Parse { offset, .. } => Some(line_col(text, *offset)),
            ModelError::Semantic(_) => None,
        }
    }
}

/// One-based line and column (in characters) of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let head = &text[..offset.min(text.len())];
    let line = head.matches('\n').count() + 1;
    let col = head.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl From<ExprError> for ModelError {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Parse {
                offset,
                expected,
                found,
            } => ModelError::Parse {
                offset,
                expected,
                found,
            },
            other => ModelError::Semantic(other.to_string()),
        }
    }
}

fn semantic<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Semantic(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ModelType {
    HA,
    PHA,
    NPHA,
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelType::HA => "HA",
            ModelType::PHA => "PHA",
            ModelType::NPHA => "NPHA",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl RelOp {
    fn symbol(self) -> &'static str {
        match self {
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
            RelOp::Eq => "=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            RelOp::Lt => lhs < rhs,
            RelOp::Le => lhs <= rhs,
            RelOp::Gt => lhs > rhs,
            RelOp::Ge => lhs >= rhs,
            RelOp::Eq => lhs == rhs,
        }
    }
}

/// Boolean combination of comparisons between expressions.
#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    Atom { lhs: Expr, op: RelOp, rhs: Expr },
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
}

impl Pred {
    pub fn atom(lhs: Expr, op: RelOp, rhs: Expr) -> Pred {
        Pred::Atom { lhs, op, rhs }
    }

    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Pred {
        match self {
            Pred::Atom { lhs, op, rhs } => Pred::Atom {
                lhs: lhs.substitute(map),
                op: *op,
                rhs: rhs.substitute(map),
            },
            Pred::And(ps) => Pred::And(ps.iter().map(|p| p.substitute(map)).collect()),
            Pred::Or(ps) => Pred::Or(ps.iter().map(|p| p.substitute(map)).collect()),
            Pred::Not(p) => Pred::Not(Box::new(p.substitute(map))),
        }
    }

    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Pred::Atom { lhs, rhs, .. } => {
                for v in lhs.variables().into_iter().chain(rhs.variables()) {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
            Pred::And(ps) | Pred::Or(ps) => ps.iter().for_each(|p| p.collect_vars(out)),
            Pred::Not(p) => p.collect_vars(out),
        }
    }

    /// Point evaluation; `None` if some expression fails to evaluate.
    pub fn holds(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Option<bool> {
        Some(match self {
            Pred::Atom { lhs, op, rhs } => {
                op.holds(lhs.eval_f64(lookup).ok()?, rhs.eval_f64(lookup).ok()?)
            }
            Pred::And(ps) => {
                for p in ps {
                    if !p.holds(lookup)? {
                        return Some(false);
                    }
                }
                true
            }
            Pred::Or(ps) => {
                for p in ps {
                    if p.holds(lookup)? {
                        return Some(true);
                    }
                }
                false
            }
            Pred::Not(p) => !p.holds(lookup)?,
        })
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pred::Atom { lhs, op, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Pred::And(ps) | Pred::Or(ps) => {
                let kw = if matches!(self, Pred::And(_)) { "and" } else { "or" };
                write!(f, "({kw}")?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
            Pred::Not(p) => write!(f, "(not {p})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Flow {
    /// `d/dt[x] = f(state, params, t)` per state variable.
    Ode(Vec<(String, Expr)>),
    /// `x(t) = g(entry state, params, t)` per state variable.
    Explicit(Vec<(String, Expr)>),
}

impl Flow {
    pub fn equations(&self) -> &[(String, Expr)] {
        match self {
            Flow::Ode(eqs) | Flow::Explicit(eqs) => eqs,
        }
    }

    fn map_exprs(&self, f: impl Fn(&Expr) -> Expr) -> Flow {
        let map = |eqs: &[(String, Expr)]| eqs.iter().map(|(v, e)| (v.clone(), f(e))).collect();
        match self {
            Flow::Ode(eqs) => Flow::Ode(map(eqs)),
            Flow::Explicit(eqs) => Flow::Explicit(map(eqs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub guard: Pred,
    pub target: u32,
    /// State variables not listed keep their value.
    pub resets: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub id: u32,
    pub invariant: Vec<Pred>,
    pub flow: Flow,
    pub jumps: Vec<Jump>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityForm {
    Normal { mean: f64, variance: f64 },
    Uniform { a: f64, b: f64 },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Bounded(Interval),
    /// `lower`/`upper` may be infinite; `seed` is where support search starts.
    Unbounded { lower: f64, upper: f64, seed: Interval },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomParam {
    pub name: String,
    /// Density in the single free variable `name`.
    pub density: Expr,
    pub form: DensityForm,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub value: f64,
    /// Enclosure of the declared probability.
    pub prob: Interval,
    /// The probability as written, for printing.
    pub prob_expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParam {
    pub name: String,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub mode: u32,
    pub assignments: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub mode: u32,
    pub pred: Pred,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub model_type: ModelType,
    pub modes: Vec<Mode>,
    pub continuous_randoms: Vec<RandomParam>,
    pub discrete_randoms: Vec<DiscreteParam>,
    pub nondet_params: Vec<(String, Interval)>,
    pub state_vars: Vec<(String, Interval)>,
    pub time_bound: f64,
    /// `#define` names with their bodies, in declaration order.
    pub defines: Vec<(String, String)>,
    pub init: Init,
    pub goal: Located,
    pub goal_c: Option<Located>,
}

impl Model {
    pub fn mode(&self, id: u32) -> Option<&Mode> {
        self.modes.iter().find(|m| m.id == id)
    }

    pub fn state_names(&self) -> Vec<String> {
        self.state_vars.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Parameter names in box order: continuous randoms, then nondet params.
    pub fn param_names(&self) -> Vec<String> {
        self.continuous_randoms
            .iter()
            .map(|r| r.name.clone())
            .chain(self.nondet_params.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// Classification by declared parameter kinds.
    pub fn classify(&self) -> ModelType {
        classify(
            !self.continuous_randoms.is_empty() || !self.discrete_randoms.is_empty(),
            !self.nondet_params.is_empty(),
        )
    }

    /// Replaces each discrete parameter `i` by its outcome `choice[i]`.
    /// Returns the reduced model and the enclosure of the branch weight.
    pub fn substitute_discrete(&self, choice: &[usize]) -> (Model, Interval) {
        assert_eq!(choice.len(), self.discrete_randoms.len());
        let mut weight = Interval::ONE;
        let mut map = HashMap::new();
        for (d, &k) in self.discrete_randoms.iter().zip(choice) {
            let o = &d.outcomes[k];
            weight = weight * o.prob;
            map.insert(d.name.clone(), Expr::Const(o.value));
        }
        let mut m = self.substitute(&map);
        m.discrete_randoms.clear();
        m.model_type = m.classify();
        (m, weight)
    }

    /// Replaces the nondeterministic parameter `name` by `value`.
    pub fn fix_nondet(&self, name: &str, value: f64) -> Model {
        let mut map = HashMap::new();
        map.insert(name.to_string(), Expr::Const(value));
        let mut m = self.substitute(&map);
        m.nondet_params.retain(|(n, _)| n != name);
        m.model_type = m.classify();
        m
    }

    /// Every combination of discrete outcomes, in lexicographic order.
    pub fn discrete_choices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for d in &self.discrete_randoms {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..d.outcomes.len()).map(move |k| {
                        let mut c = prefix.clone();
                        c.push(k);
                        c
                    })
                })
                .collect();
        }
        out
    }

    fn substitute(&self, map: &HashMap<String, Expr>) -> Model {
        let sub = |e: &Expr| e.substitute(map);
        let mut m = self.clone();
        for mode in &mut m.modes {
            mode.invariant = mode.invariant.iter().map(|p| p.substitute(map)).collect();
            mode.flow = mode.flow.map_exprs(sub);
            for j in &mut mode.jumps {
                j.guard = j.guard.substitute(map);
                j.resets = j.resets.iter().map(|(v, e)| (v.clone(), sub(e))).collect();
            }
        }
        m.init.assignments = m
            .init
            .assignments
            .iter()
            .map(|(v, e)| (v.clone(), sub(e)))
            .collect();
        m.goal.pred = m.goal.pred.substitute(map);
        if let Some(gc) = &mut m.goal_c {
            gc.pred = gc.pred.substitute(map);
        }
        m
    }
}

fn classify(random: bool, nondet: bool) -> ModelType {
    match (random, nondet) {
        (false, _) => ModelType::HA,
        (true, false) => ModelType::PHA,
        (true, true) => ModelType::NPHA,
    }
}

/// Density of `N(mean, variance)` in variable `name`.
pub fn normal_density(name: &str, mean: f64, variance: f64) -> Expr {
    let x = Expr::var(name);
    let centered = Expr::Sub(Box::new(x), Box::new(Expr::Const(mean)));
    let exponent = Expr::Neg(Box::new(Expr::Div(
        Box::new(Expr::Pow(Box::new(centered), 2)),
        Box::new(Expr::Mul(Box::new(Expr::Const(2.0)), Box::new(Expr::Const(variance)))),
    )));
    let norm = Expr::Call(
        crate::expr::Func::Sqrt,
        Box::new(Expr::Mul(
            Box::new(Expr::Mul(Box::new(Expr::Const(2.0)), Box::new(Expr::Pi))),
            Box::new(Expr::Const(variance)),
        )),
    );
    Expr::Div(
        Box::new(Expr::Call(crate::expr::Func::Exp, Box::new(exponent))),
        Box::new(norm),
    )
}

fn uniform_density(a: f64, b: f64) -> Expr {
    Expr::Div(
        Box::new(Expr::Const(1.0)),
        Box::new(Expr::Sub(Box::new(Expr::Const(b)), Box::new(Expr::Const(a)))),
    )
}

/// Parses and validates a model.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let raw = tokenize(text, true).map_err(|e| ModelError::Parse {
        offset: e.offset,
        expected: vec!["a valid token".into()],
        found: e.message,
    })?;
    let (tokens, defines) = expand_defines(&raw, text)?;
    let mut p = Parser {
        ep: ExprParser::new(&tokens, text.len()),
        raw: RawModel::default(),
    };
    p.top_level()?;
    let mut raw = p.raw;
    raw.defines = defines;
    build(raw)
}

fn expand_defines(
    raw: &[Token],
    text: &str,
) -> Result<(Vec<Token>, Vec<(String, String)>), ModelError> {
    let mut bodies: HashMap<String, Vec<Token>> = HashMap::new();
    let mut defines = Vec::new();
    let mut rest = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        match &raw[i].tok {
            Tok::Define => {
                let name = match raw.get(i + 1).map(|t| &t.tok) {
                    Some(Tok::Ident(n)) => n.clone(),
                    _ => {
                        return Err(ModelError::Parse {
                            offset: raw.get(i + 1).map(|t| t.offset).unwrap_or(text.len()),
                            expected: vec!["macro name".into()],
                            found: raw
                                .get(i + 1)
                                .map(|t| t.tok.to_string())
                                .unwrap_or_else(|| "end of input".into()),
                        })
                    }
                };
                let mut j = i + 2;
                while j < raw.len() && raw[j].tok != Tok::Newline {
                    j += 1;
                }
                let body = raw[i + 2..j].to_vec();
                if bodies.contains_key(&name) {
                    return semantic(format!("macro `{name}` defined twice"));
                }
                let start = body.first().map(|t| t.offset).unwrap_or(raw[i].offset);
                let end = raw.get(j).map(|t| t.offset).unwrap_or(text.len());
                let body_text = text[start..end.max(start)].trim().to_string();
                defines.push((name.clone(), body_text));
                bodies.insert(name, body);
                i = j;
            }
            Tok::Newline => i += 1,
            _ => {
                rest.push(raw[i].clone());
                i += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(rest.len());
    let mut stack = Vec::new();
    for t in &rest {
        expand_token(t, &bodies, &mut stack, &mut out)?;
    }
    Ok((out, defines))
}

fn expand_token(
    t: &Token,
    bodies: &HashMap<String, Vec<Token>>,
    stack: &mut Vec<String>,
    out: &mut Vec<Token>,
) -> Result<(), ModelError> {
    if let Tok::Ident(name) = &t.tok {
        if let Some(body) = bodies.get(name) {
            if stack.contains(name) {
                return semantic(format!("macro `{name}` expands to itself"));
            }
            stack.push(name.clone());
            for b in body {
                expand_token(b, bodies, stack, out)?;
            }
            stack.pop();
            return Ok(());
        }
    }
    out.push(t.clone());
    Ok(())
}

#[derive(Default)]
struct RawModel {
    model_type: Option<(ModelType, usize)>,
    ranged: Vec<(String, Interval)>,
    randoms: Vec<RandomParam>,
    discrete: Vec<DiscreteParam>,
    modes: Vec<Mode>,
    init: Option<(u32, Pred)>,
    goal: Option<Located>,
    goal_c: Option<Located>,
    defines: Vec<(String, String)>,
}

struct Parser<'a> {
    ep: ExprParser<'a>,
    raw: RawModel,
}

fn is_ident(t: Option<&Tok>, name: &str) -> bool {
    matches!(t, Some(Tok::Ident(s)) if s == name)
}

impl Parser<'_> {
    fn err<T>(&self, expected: &[&str]) -> Result<T, ModelError> {
        Err(self.ep.error(expected).into())
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ModelError> {
        Ok(self.ep.expect(&tok)?)
    }

    fn ident(&mut self) -> Result<String, ModelError> {
        match self.ep.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.ep.bump();
                Ok(s)
            }
            _ => self.err(&["identifier"]),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ModelError> {
        if is_ident(self.ep.peek(), kw) {
            self.ep.bump();
            Ok(())
        } else {
            self.err(&[&format!("`{kw}`")])
        }
    }

    /// A constant expression evaluated to an enclosure.
    fn const_interval(&mut self) -> Result<(Expr, Interval), ModelError> {
        let offset = self.ep.offset();
        let e = self.ep.expr()?;
        match e.eval_interval(&IntervalBox::default()) {
            Ok(v) => Ok((e, v)),
            Err(_) => Err(ModelError::Parse {
                offset,
                expected: vec!["constant expression".into()],
                found: format!("`{e}`"),
            }),
        }
    }

    fn const_f64(&mut self) -> Result<f64, ModelError> {
        let offset = self.ep.offset();
        let e = self.ep.expr()?;
        e.eval_f64(&|_| None).map_err(|_| ModelError::Parse {
            offset,
            expected: vec!["constant expression".into()],
            found: format!("`{e}`"),
        })
    }

    fn integer(&mut self) -> Result<u32, ModelError> {
        match self.ep.peek() {
            Some(Tok::Num(x)) if x.fract() == 0.0 && *x >= 0.0 && *x <= u32::MAX as f64 => {
                let v = *x as u32;
                self.ep.bump();
                Ok(v)
            }
            _ => self.err(&["mode number"]),
        }
    }

    fn top_level(&mut self) -> Result<(), ModelError> {
        while !self.ep.at_end() {
            let at_paren = self.ep.peek_at(1) == Some(&Tok::LParen);
            match self.ep.peek().cloned() {
                Some(Tok::Ident(kw)) if kw == "MODEL_TYPE" => self.model_type()?,
                Some(Tok::Ident(kw)) if kw == "N" && at_paren => self.normal()?,
                Some(Tok::Ident(kw)) if kw == "U" && at_paren => self.uniform()?,
                Some(Tok::Ident(kw)) if kw == "PDF" && at_paren => self.custom_pdf()?,
                Some(Tok::Ident(kw)) if kw == "D" && self.ep.peek_at(1) == Some(&Tok::LBrace) => {
                    self.discrete()?
                }
                Some(Tok::Ident(kw)) if kw == "init" => {
                    self.ep.bump();
                    self.expect(Tok::Colon)?;
                    let (mode, pred) = self.located()?;
                    if self.raw.init.is_some() {
                        return semantic("more than one `init` declaration");
                    }
                    self.raw.init = Some((mode, pred));
                }
                Some(Tok::Ident(kw)) if kw == "goal" || kw == "goal_c" => {
                    self.ep.bump();
                    self.expect(Tok::Colon)?;
                    let (mode, pred) = self.located()?;
                    let slot = if kw == "goal" {
                        &mut self.raw.goal
                    } else {
                        &mut self.raw.goal_c
                    };
                    if slot.is_some() {
                        return semantic(format!("more than one `{kw}` declaration"));
                    }
                    *slot = Some(Located { mode, pred });
                }
                Some(Tok::LBracket) => self.ranged()?,
                Some(Tok::LBrace) => self.mode()?,
                _ => {
                    return self.err(&[
                        "`MODEL_TYPE`",
                        "a declaration",
                        "`{`",
                        "`init`",
                        "`goal`",
                        "`goal_c`",
                    ])
                }
            }
        }
        Ok(())
    }

    fn model_type(&mut self) -> Result<(), ModelError> {
        let offset = self.ep.offset();
        self.ep.bump();
        self.expect(Tok::LParen)?;
        let t = match self.ep.peek() {
            Some(Tok::Ident(s)) if s == "HA" => ModelType::HA,
            Some(Tok::Ident(s)) if s == "PHA" => ModelType::PHA,
            Some(Tok::Ident(s)) if s == "NPHA" => ModelType::NPHA,
            _ => return self.err(&["`HA`", "`PHA`", "`NPHA`"]),
        };
        self.ep.bump();
        self.expect(Tok::RParen)?;
        if self.raw.model_type.is_some() {
            return semantic("MODEL_TYPE declared twice");
        }
        self.raw.model_type = Some((t, offset));
        Ok(())
    }

    fn decl_name(&mut self) -> Result<String, ModelError> {
        let name = self.ident()?;
        self.expect(Tok::Semi)?;
        Ok(name)
    }

    fn normal(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        self.expect(Tok::LParen)?;
        let mean = self.const_f64()?;
        self.expect(Tok::Comma)?;
        let variance = self.const_f64()?;
        self.expect(Tok::RParen)?;
        let name = self.decl_name()?;
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return semantic(format!("`{name}`: normal variance must be positive"));
        }
        let sigma = variance.sqrt();
        self.raw.randoms.push(RandomParam {
            density: normal_density(&name, mean, variance),
            form: DensityForm::Normal { mean, variance },
            support: Support::Unbounded {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                seed: Interval::new(mean - 4.0 * sigma, mean + 4.0 * sigma),
            },
            name,
        });
        Ok(())
    }

    fn uniform(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        self.expect(Tok::LParen)?;
        let a = self.const_f64()?;
        self.expect(Tok::Comma)?;
        let b = self.const_f64()?;
        self.expect(Tok::RParen)?;
        let name = self.decl_name()?;
        if !(a < b && a.is_finite() && b.is_finite()) {
            return semantic(format!("`{name}`: uniform bounds must satisfy a < b"));
        }
        self.raw.randoms.push(RandomParam {
            density: uniform_density(a, b),
            form: DensityForm::Uniform { a, b },
            support: Support::Bounded(Interval::new(a, b)),
            name,
        });
        Ok(())
    }

    fn bound(&mut self) -> Result<f64, ModelError> {
        if is_ident(self.ep.peek(), "infty") {
            self.ep.bump();
            return Ok(f64::INFINITY);
        }
        if self.ep.peek() == Some(&Tok::Minus) && is_ident(self.ep.peek_at(1), "infty") {
            self.ep.bump();
            self.ep.bump();
            return Ok(f64::NEG_INFINITY);
        }
        self.const_f64()
    }

    fn custom_pdf(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        self.expect(Tok::LParen)?;
        let density = self.ep.expr()?;
        self.expect(Tok::Comma)?;
        let lower = self.bound()?;
        self.expect(Tok::Comma)?;
        let upper = self.bound()?;
        let seed = if self.ep.eat(&Tok::Comma) {
            let a = self.const_f64()?;
            self.expect(Tok::Comma)?;
            let b = self.const_f64()?;
            Some((a, b))
        } else {
            None
        };
        self.expect(Tok::RParen)?;
        let name = self.decl_name()?;
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return semantic(format!("`{name}`: empty support"));
        }
        let support = if lower.is_finite() && upper.is_finite() {
            Support::Bounded(Interval::new(lower, upper))
        } else {
            let Some((a, b)) = seed else {
                return semantic(format!(
                    "`{name}`: unbounded support needs a seed interval"
                ));
            };
            if !(a < b && a >= lower && b <= upper && a.is_finite() && b.is_finite()) {
                return semantic(format!("`{name}`: seed interval must lie inside the support"));
            }
            Support::Unbounded {
                lower,
                upper,
                seed: Interval::new(a, b),
            }
        };
        self.raw.randoms.push(RandomParam {
            name,
            density,
            form: DensityForm::Custom,
            support,
        });
        Ok(())
    }

    fn discrete(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        self.expect(Tok::LBrace)?;
        let mut outcomes = Vec::new();
        loop {
            let value = self.const_f64()?;
            self.expect(Tok::Colon)?;
            let (prob_expr, prob) = self.const_interval()?;
            outcomes.push(Outcome {
                value,
                prob,
                prob_expr,
            });
            if !self.ep.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RBrace)?;
        let name = self.decl_name()?;
        self.raw.discrete.push(DiscreteParam { name, outcomes });
        Ok(())
    }

    fn ranged(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        let lo = self.const_f64()?;
        self.expect(Tok::Comma)?;
        let hi = self.const_f64()?;
        self.expect(Tok::RBracket)?;
        let name = self.decl_name()?;
        match Interval::try_new(lo, hi) {
            Some(x) if x.is_finite() => self.raw.ranged.push((name, x)),
            _ => return semantic(format!("`{name}`: malformed range [{lo}, {hi}]")),
        }
        Ok(())
    }

    fn mode(&mut self) -> Result<(), ModelError> {
        self.ep.bump();
        let id = match self.ep.peek() {
            Some(Tok::Ident(s)) if s.starts_with("mode") => s["mode".len()..].parse::<u32>().ok(),
            _ => None,
        };
        let Some(id) = id else {
            return self.err(&["`mode<N>`"]);
        };
        self.ep.bump();
        self.expect(Tok::Semi)?;
        let mut invariant = Vec::new();
        let mut flow: Option<Flow> = None;
        let mut jumps = Vec::new();
        loop {
            if self.ep.eat(&Tok::RBrace) {
                break;
            }
            let section = self.ident()?;
            self.expect(Tok::Colon)?;
            match section.as_str() {
                "invt" => {
                    while !self.section_end() {
                        invariant.push(self.pred()?);
                        self.expect(Tok::Semi)?;
                    }
                }
                "flow" => {
                    while !self.section_end() {
                        self.flow_eq(&mut flow, id)?;
                    }
                }
                "jump" => {
                    while !self.section_end() {
                        jumps.push(self.jump()?);
                    }
                }
                other => {
                    return semantic(format!(
                        "mode {id}: unknown section `{other}` (expected invt, flow or jump)"
                    ))
                }
            }
        }
        let Some(flow) = flow else {
            return semantic(format!("mode {id} has no flow"));
        };
        self.raw.modes.push(Mode {
            id,
            invariant,
            flow,
            jumps,
        });
        Ok(())
    }

    fn section_end(&self) -> bool {
        match self.ep.peek() {
            None | Some(Tok::RBrace) => true,
            Some(Tok::Ident(s)) => {
                matches!(s.as_str(), "invt" | "flow" | "jump")
                    && self.ep.peek_at(1) == Some(&Tok::Colon)
            }
            _ => false,
        }
    }

    fn flow_eq(&mut self, flow: &mut Option<Flow>, id: u32) -> Result<(), ModelError> {
        let explicit = if is_ident(self.ep.peek(), "sol") {
            self.ep.bump();
            true
        } else {
            self.keyword("d")?;
            self.expect(Tok::Slash)?;
            self.keyword("dt")?;
            false
        };
        self.expect(Tok::LBracket)?;
        let var = self.ident()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Eq)?;
        let rhs = self.ep.expr()?;
        self.expect(Tok::Semi)?;
        let slot = flow.get_or_insert_with(|| {
            if explicit {
                Flow::Explicit(Vec::new())
            } else {
                Flow::Ode(Vec::new())
            }
        });
        let eqs = match (slot, explicit) {
            (Flow::Ode(eqs), false) | (Flow::Explicit(eqs), true) => eqs,
            _ => return semantic(format!("mode {id} mixes `d/dt` and `sol` flows")),
        };
        if eqs.iter().any(|(v, _)| *v == var) {
            return semantic(format!("mode {id}: two flows for `{var}`"));
        }
        eqs.push((var, rhs));
        Ok(())
    }

    fn jump(&mut self) -> Result<Jump, ModelError> {
        let guard = self.pred()?;
        self.expect(Tok::Arrow)?;
        self.expect(Tok::At)?;
        let target = self.integer()?;
        self.expect(Tok::LParen)?;
        let mut resets = Vec::new();
        if is_ident(self.ep.peek(), "and") && self.ep.peek_at(1) != Some(&Tok::Prime) {
            self.ep.bump();
            while self.ep.eat(&Tok::LParen) {
                resets.push(self.reset()?);
                self.expect(Tok::RParen)?;
            }
        } else if self.ep.peek() != Some(&Tok::RParen) {
            resets.push(self.reset()?);
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Semi)?;
        Ok(Jump {
            guard,
            target,
            resets,
        })
    }

    fn reset(&mut self) -> Result<(String, Expr), ModelError> {
        let var = self.ident()?;
        self.expect(Tok::Prime)?;
        self.expect(Tok::Eq)?;
        let e = self.ep.expr()?;
        Ok((var, e))
    }

    fn located(&mut self) -> Result<(u32, Pred), ModelError> {
        self.expect(Tok::At)?;
        let mode = self.integer()?;
        let pred = self.pred()?;
        self.expect(Tok::Semi)?;
        Ok((mode, pred))
    }

    fn pred(&mut self) -> Result<Pred, ModelError> {
        let logical = match self.ep.peek() {
            Some(Tok::Ident(s)) if self.ep.peek_at(1) == Some(&Tok::LParen) => {
                match s.as_str() {
                    "and" | "or" | "not" => Some(s.clone()),
                    _ => None,
                }
            }
            _ => None,
        };
        if let Some(kw) = logical {
            self.ep.bump();
            let mut children = Vec::new();
            while self.ep.peek() == Some(&Tok::LParen) {
                children.push(self.pred()?);
                if kw == "not" {
                    break;
                }
            }
            return Ok(match kw.as_str() {
                "and" => Pred::And(children),
                "or" => Pred::Or(children),
                _ => Pred::Not(Box::new(children.pop().expect("not has an operand"))),
            });
        }
        if self.ep.peek() == Some(&Tok::LParen) {
            let save = self.ep.pos;
            self.ep.bump();
            let wrapped = self.pred().and_then(|p| {
                self.expect(Tok::RParen)?;
                Ok(p)
            });
            match wrapped {
                Ok(p) => return Ok(p),
                Err(first) => {
                    self.ep.pos = save;
                    return self.atom().map_err(|second| furthest(first, second));
                }
            }
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Pred, ModelError> {
        let lhs = self.ep.expr()?;
        let op = match self.ep.peek() {
            Some(Tok::Lt) => RelOp::Lt,
            Some(Tok::Le) => RelOp::Le,
            Some(Tok::Gt) => RelOp::Gt,
            Some(Tok::Ge) => RelOp::Ge,
            Some(Tok::Eq) => RelOp::Eq,
            _ => return self.err(&["comparison operator"]),
        };
        self.ep.bump();
        let rhs = self.ep.expr()?;
        Ok(Pred::Atom { lhs, op, rhs })
    }
}

fn furthest(a: ModelError, b: ModelError) -> ModelError {
    match (&a, &b) {
        (ModelError::Parse { offset: oa, .. }, ModelError::Parse { offset: ob, .. }) => {
            if oa > ob {
                a
            } else {
                b
            }
        }
        _ => b,
    }
}

fn build(raw: RawModel) -> Result<Model, ModelError> {
    let mut seen = HashSet::new();
    let all_names = raw
        .randoms
        .iter()
        .map(|r| &r.name)
        .chain(raw.discrete.iter().map(|d| &d.name))
        .chain(raw.ranged.iter().map(|(n, _)| n));
    for n in all_names {
        if !seen.insert(n.clone()) {
            return semantic(format!("`{n}` declared twice"));
        }
        if n == "t" || n == "pi" {
            return semantic(format!("`{n}` is reserved"));
        }
    }

    let mut ids = HashSet::new();
    for m in &raw.modes {
        if !ids.insert(m.id) {
            return semantic(format!("duplicate mode id {}", m.id));
        }
    }
    if raw.modes.is_empty() {
        return semantic("model has no modes");
    }

    let time_bound = match raw.ranged.iter().find(|(n, _)| n == "time") {
        Some((_, x)) if x.lo() == 0.0 && x.hi() > 0.0 => x.hi(),
        Some(_) => return semantic("`time` must be declared as [0,T] with T > 0"),
        None => return semantic("missing time bound declaration `[0,T]time;`"),
    };

    let flowed: HashSet<&String> = raw
        .modes
        .iter()
        .flat_map(|m| m.flow.equations().iter().map(|(v, _)| v))
        .collect();
    for v in &flowed {
        if !raw.ranged.iter().any(|(n, _)| n == *v) || v.as_str() == "time" {
            return semantic(format!("flow for undeclared state variable `{v}`"));
        }
    }
    let state_vars: Vec<(String, Interval)> = raw
        .ranged
        .iter()
        .filter(|(n, _)| flowed.contains(n))
        .cloned()
        .collect();
    let nondet_params: Vec<(String, Interval)> = raw
        .ranged
        .iter()
        .filter(|(n, _)| !flowed.contains(n) && n != "time")
        .cloned()
        .collect();

    let state: HashSet<&str> = state_vars.iter().map(|(n, _)| n.as_str()).collect();
    let params: HashSet<&str> = raw
        .randoms
        .iter()
        .map(|r| r.name.as_str())
        .chain(raw.discrete.iter().map(|d| d.name.as_str()))
        .chain(nondet_params.iter().map(|(n, _)| n.as_str()))
        .collect();
    let in_state_or_param = |v: &str| state.contains(v) || params.contains(v);

    let check = |what: &str, vars: Vec<String>, ok: &dyn Fn(&str) -> bool| {
        match vars.into_iter().find(|v| !ok(v)) {
            Some(v) => semantic(format!("undeclared variable `{v}` in {what}")),
            None => Ok(()),
        }
    };

    for m in &raw.modes {
        for (v, _) in &state_vars {
            if !m.flow.equations().iter().any(|(x, _)| x == v) {
                return semantic(format!("mode {} has no flow for `{v}`", m.id));
            }
        }
        let with_t = |v: &str| in_state_or_param(v) || v == "t";
        for (v, e) in m.flow.equations() {
            check(&format!("flow of `{v}` in mode {}", m.id), e.variables(), &with_t)?;
        }
        for p in &m.invariant {
            check(&format!("invariant of mode {}", m.id), p.variables(), &in_state_or_param)?;
        }
        for j in &m.jumps {
            if !ids.contains(&j.target) {
                return semantic(format!("jump from mode {} to undefined mode {}", m.id, j.target));
            }
            check(&format!("guard in mode {}", m.id), j.guard.variables(), &in_state_or_param)?;
            let mut reset_seen = HashSet::new();
            for (v, e) in &j.resets {
                if !state.contains(v.as_str()) {
                    return semantic(format!("reset of non-state variable `{v}` in mode {}", m.id));
                }
                if !reset_seen.insert(v) {
                    return semantic(format!("`{v}` reset twice in mode {}", m.id));
                }
                check(&format!("reset in mode {}", m.id), e.variables(), &in_state_or_param)?;
            }
        }
    }

    for r in &raw.randoms {
        check_density(r)?;
    }
    for d in &raw.discrete {
        let total = d.outcomes.iter().fold(Interval::ZERO, |acc, o| acc + o.prob);
        if d.outcomes.iter().any(|o| o.prob.hi() <= 0.0 || !o.value.is_finite()) {
            return semantic(format!("`{}`: outcome probabilities must be positive", d.name));
        }
        if total.lo() > 1.0 + 1e-12 || total.hi() < 1.0 - 1e-12 {
            return semantic(format!(
                "`{}`: outcome probabilities sum to {} instead of 1",
                d.name,
                total.midpoint()
            ));
        }
        let mut values = d.outcomes.iter().map(|o| o.value).collect::<Vec<_>>();
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1]) {
            return semantic(format!("`{}`: repeated outcome value", d.name));
        }
    }

    let Some((init_mode, init_pred)) = raw.init else {
        return semantic("missing `init` declaration");
    };
    if !ids.contains(&init_mode) {
        return semantic(format!("init refers to undefined mode {init_mode}"));
    }
    let atoms = match init_pred {
        Pred::And(ps) => ps,
        p => vec![p],
    };
    let mut assignments = Vec::new();
    for a in atoms {
        match a {
            Pred::Atom {
                lhs: Expr::Var(v),
                op: RelOp::Eq,
                rhs,
            } if state.contains(v.as_str()) => {
                if assignments.iter().any(|(n, _)| *n == v) {
                    return semantic(format!("`{v}` initialised twice"));
                }
                check("init", rhs.variables(), &|x| params.contains(x))?;
                assignments.push((v, rhs));
            }
            other => {
                return semantic(format!(
                    "init must be a conjunction of `state = expr` equalities, found {other}"
                ))
            }
        }
    }
    for (v, _) in &state_vars {
        if !assignments.iter().any(|(n, _)| n == v) {
            return semantic(format!("init does not set `{v}`"));
        }
    }

    let Some(goal) = raw.goal else {
        return semantic("missing `goal` declaration");
    };
    for g in std::iter::once(&goal).chain(raw.goal_c.as_ref()) {
        if !ids.contains(&g.mode) {
            return semantic(format!("goal refers to undefined mode {}", g.mode));
        }
        check("goal", g.pred.variables(), &in_state_or_param)?;
    }

    let model_type = classify(
        !raw.randoms.is_empty() || !raw.discrete.is_empty(),
        !nondet_params.is_empty(),
    );
    if let Some((declared, _)) = raw.model_type {
        if declared != model_type {
            return semantic(format!(
                "MODEL_TYPE({declared}) does not match the declared parameters, which make a {model_type}"
            ));
        }
    }

    Ok(Model {
        model_type,
        modes: raw.modes,
        continuous_randoms: raw.randoms,
        discrete_randoms: raw.discrete,
        nondet_params,
        state_vars,
        time_bound,
        defines: raw.defines,
        init: Init {
            mode: init_mode,
            assignments,
        },
        goal,
        goal_c: raw.goal_c,
    })
}

/// Checks that the density only mentions its own variable and is not
/// negative at a handful of sample points.
fn check_density(r: &RandomParam) -> Result<(), ModelError> {
    if let Some(v) = r.density.variables().into_iter().find(|v| *v != r.name) {
        return semantic(format!("density of `{}` mentions `{v}`", r.name));
    }
    let range = match &r.support {
        Support::Bounded(x) => *x,
        Support::Unbounded { seed, .. } => *seed,
    };
    const SAMPLES: usize = 17;
    for i in 0..SAMPLES {
        let x = range.lo() + (range.hi() - range.lo()) * i as f64 / (SAMPLES - 1) as f64;
        let x = x.clamp(range.lo(), range.hi());
        let env = IntervalBox::new(vec![(r.name.clone(), Interval::point(x))]);
        match r.density.eval_interval(&env) {
            Ok(v) if v.hi() < 0.0 => {
                return semantic(format!("density of `{}` is negative at {x}", r.name))
            }
            Ok(_) => {}
            Err(e) => return semantic(format!("density of `{}` at {x}: {e}", r.name)),
        }
    }
    Ok(())
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "infty".into()
    } else if x == f64::NEG_INFINITY {
        "-infty".into()
    } else {
        format!("{x:?}")
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MODEL_TYPE({})", self.model_type)?;
        for r in &self.continuous_randoms {
            match (&r.form, &r.support) {
                (DensityForm::Normal { mean, variance }, _) => {
                    writeln!(f, "N({mean:?},{variance:?}){};", r.name)?
                }
                (DensityForm::Uniform { a, b }, _) => writeln!(f, "U({a:?},{b:?}){};", r.name)?,
                (DensityForm::Custom, Support::Bounded(x)) => writeln!(
                    f,
                    "PDF({}, {:?}, {:?}){};",
                    r.density,
                    x.lo(),
                    x.hi(),
                    r.name
                )?,
                (DensityForm::Custom, Support::Unbounded { lower, upper, seed }) => writeln!(
                    f,
                    "PDF({}, {}, {}, {:?}, {:?}){};",
                    r.density,
                    fmt_bound(*lower),
                    fmt_bound(*upper),
                    seed.lo(),
                    seed.hi(),
                    r.name
                )?,
            }
        }
        for d in &self.discrete_randoms {
            let body: Vec<String> = d
                .outcomes
                .iter()
                .map(|o| format!("{:?}:{}", o.value, o.prob_expr))
                .collect();
            writeln!(f, "D{{{}}}{};", body.join(", "), d.name)?;
        }
        writeln!(f, "[0.0,{:?}]time;", self.time_bound)?;
        for (n, x) in self.state_vars.iter().chain(&self.nondet_params) {
            writeln!(f, "[{:?},{:?}]{n};", x.lo(), x.hi())?;
        }
        for m in &self.modes {
            writeln!(f, "{{\nmode{};", m.id)?;
            if !m.invariant.is_empty() {
                writeln!(f, "\tinvt:")?;
                for p in &m.invariant {
                    writeln!(f, "\t\t{p};")?;
                }
            }
            writeln!(f, "\tflow:")?;
            for (v, e) in m.flow.equations() {
                match m.flow {
                    Flow::Ode(_) => writeln!(f, "\t\td/dt[{v}]={e};")?,
                    Flow::Explicit(_) => writeln!(f, "\t\tsol[{v}]={e};")?,
                }
            }
            if !m.jumps.is_empty() {
                writeln!(f, "\tjump:")?;
                for j in &m.jumps {
                    let resets: String = j
                        .resets
                        .iter()
                        .map(|(v, e)| format!("({v}'={e})"))
                        .collect();
                    writeln!(f, "\t\t{}==>@{}(and{resets});", j.guard, j.target)?;
                }
            }
            writeln!(f, "}}")?;
        }
        let init: Vec<String> = self
            .init
            .assignments
            .iter()
            .map(|(v, e)| format!("({v} = {e})"))
            .collect();
        writeln!(f, "init:\n\t@{}(and {});", self.init.mode, init.join(" "))?;
        writeln!(f, "goal:\n\t@{}{};", self.goal.mode, self.goal.pred)?;
        if let Some(gc) = &self.goal_c {
            writeln!(f, "goal_c:\n\t@{}{};", gc.mode, gc.pred)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_locations() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 0), (1, 1));
        let text = "[0,1]time;\n[0,1]x;\n{ mode1 flow: }";
        let e = parse_model(text).unwrap_err();
        assert_eq!(e.location(text).map(|l| l.0), Some(3), "{e}");
    }


    const PROSTATE: &str = include_str!("../../../models/prostate.pdrh");

    #[test]
    fn prostate_listing() {
        let m = parse_model(PROSTATE).unwrap();
        assert_eq!(m.model_type, ModelType::NPHA);
        assert_eq!(m.modes.len(), 2);
        assert_eq!(m.continuous_randoms.len(), 1);
        assert_eq!(m.continuous_randoms[0].name, "alphay");
        assert_eq!(
            m.continuous_randoms[0].form,
            DensityForm::Normal {
                mean: 0.05,
                variance: 0.01
            }
        );
        assert_eq!(m.nondet_params, vec![("alphax".to_string(), Interval::new(0.0197, 0.0204))]);
        assert_eq!(m.state_names(), vec!["tau", "x", "y", "z"]);
        assert_eq!(m.time_bound, 100.0);
        assert_eq!(m.defines.len(), 20);
        assert_eq!(m.defines[5], ("k4".to_string(), "2".to_string()));
        assert_eq!(m.modes[0].jumps[0].target, 2);
        assert_eq!(m.modes[0].jumps[0].resets.len(), 4);
        assert_eq!(m.init.assignments[0].0, "x");
        let gc = m.goal_c.as_ref().unwrap();
        assert_eq!(gc.mode, 2);
        assert!(matches!(&gc.pred, Pred::And(ps) if ps.len() == 2));
        // the macro T was expanded inside the goal
        assert!(m.goal.pred.to_string().contains("100.0"));
    }

    fn minimal(decls: &str, model_type: &str) -> String {
        format!(
            "MODEL_TYPE({model_type})\n{decls}\n[0,1]time;\n[0,10]x;\n\
             {{ mode1; flow: d/dt[x]=1; }}\ninit: @1(x = 0);\ngoal: @1(x >= 0.5);\n"
        )
    }

    #[test]
    fn classification_by_declared_kinds() {
        assert_eq!(parse_model(&minimal("", "HA")).unwrap().model_type, ModelType::HA);
        assert_eq!(parse_model(&minimal("[0,1]p;", "HA")).unwrap().model_type, ModelType::HA);
        assert_eq!(parse_model(&minimal("N(0,1)r;", "PHA")).unwrap().model_type, ModelType::PHA);
        assert_eq!(
            parse_model(&minimal("N(0,1)r;\n[0,1]p;", "NPHA")).unwrap().model_type,
            ModelType::NPHA
        );
        assert!(matches!(
            parse_model(&minimal("", "NPHA")),
            Err(ModelError::Semantic(_))
        ));
    }

    #[test]
    fn discrete_probabilities_must_sum_to_one() {
        let bad = minimal("D{1:0.3, 2:0.5, 3:0.3}a;", "PHA");
        match parse_model(&bad) {
            Err(ModelError::Semantic(msg)) => assert!(msg.contains("sum"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(parse_model(&minimal("D{1:1/3, 2:1/3, 3:1/3}a;", "PHA")).is_ok());
    }

    #[test]
    fn semantic_errors() {
        let undeclared = minimal("", "HA").replace("d/dt[x]=1", "d/dt[x]=q");
        assert!(matches!(parse_model(&undeclared), Err(ModelError::Semantic(m)) if m.contains("`q`")));
        let dup = minimal("", "HA").replace("init", "{ mode1; flow: d/dt[x]=2; }\ninit");
        assert!(matches!(parse_model(&dup), Err(ModelError::Semantic(m)) if m.contains("duplicate")));
        let cyc = format!("#define a b\n#define b a\n{}", minimal("", "HA").replace("0.5", "a"));
        assert!(matches!(parse_model(&cyc), Err(ModelError::Semantic(m)) if m.contains("itself")));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = minimal("", "HA").replace("d/dt[x]=1;", "d/dt[x]=1");
        match parse_model(&text) {
            Err(ModelError::Parse { offset, expected, .. }) => {
                assert_eq!(&text[offset..offset + 1], "}");
                assert!(expected.iter().any(|e| e.contains(';')));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn substitute_discrete_weights() {
        let text = minimal("D{0.5236:0.3, 0.7854:0.5, 1.0472:0.2}alpha;", "PHA")
            .replace("d/dt[x]=1", "d/dt[x]=cos(alpha)");
        let m = parse_model(&text).unwrap();
        let (reduced, w) = m.substitute_discrete(&[1]);
        assert!(w.contains(0.5));
        assert_eq!(reduced.model_type, ModelType::HA);
        assert!(!reduced.modes[0].flow.equations()[0].1.mentions("alpha"));
        let total = m
            .discrete_choices()
            .iter()
            .fold(Interval::ZERO, |acc, c| acc + m.substitute_discrete(c).1);
        assert!(total.contains(1.0));

        let two = minimal("D{1:0.3, 2:0.7}a;\nD{1:0.4, 2:0.6}b;", "PHA");
        let m = parse_model(&two).unwrap();
        assert_eq!(m.discrete_choices().len(), 4);
        assert!(m.substitute_discrete(&[0, 0]).1.contains(0.12));

        let plain = parse_model(&minimal("", "HA")).unwrap();
        let (same, w) = plain.substitute_discrete(&[]);
        assert_eq!(same, plain);
        assert_eq!(w, Interval::ONE);
    }

    #[test]
    fn print_then_parse_round_trips() {
        let mut original = parse_model(PROSTATE).unwrap();
        let printed = original.to_string();
        let reparsed = parse_model(&printed).unwrap();
        original.defines.clear();
        assert_eq!(reparsed, original, "{printed}");

        let text = minimal(
            "D{1:0.25, 2:0.75}a;\nU(0,2)u;\nPDF(exp(-w), 0, infty, 0, 1)w;\nPDF(1, 0, 1)v;",
            "PHA",
        )
        .replace("{ mode1; flow: d/dt[x]=1; }", "{ mode1; invt: (x <= 9); flow: sol[x]=x + a*t; jump: (or (x >= 2) (not (x < 1)))==>@1(x'=0); }");
        let m = parse_model(&text).unwrap();
        assert_eq!(parse_model(&m.to_string()).unwrap(), Model { defines: vec![], ..m });
    }
}
