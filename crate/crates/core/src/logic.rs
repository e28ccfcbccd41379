//! Three-valued evaluation of predicates over boxes.
//!
//! Each atom `lhs op rhs` is evaluated as `d = lhs - rhs` against zero with
//! a margin `delta`: an atom is `True` only if it holds with room `delta`
//! to spare, and `False` only if even its `delta`-weakening fails. Smaller
//! `delta` never turns a decided atom back into `Unknown`.

use serde::Serialize;

use crate::expr::{Expr, ExprError, Tape};
use crate::interval::Interval;
use crate::model::{Pred, RelOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    pub fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    pub fn or(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, Truth::False) => Truth::False,
            _ => Truth::Unknown,
        }
    }

    pub fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }

    pub fn may_hold(self) -> bool {
        self != Truth::False
    }
}

/// Decides `d op 0` for an enclosure `d`.
pub fn atom_truth(d: Interval, op: RelOp, delta: f64) -> Truth {
    let decide = |t: bool, f: bool| {
        if t {
            Truth::True
        } else if f {
            Truth::False
        } else {
            Truth::Unknown
        }
    };
    match op {
        RelOp::Ge => decide(d.lo() >= delta, d.hi() < -delta),
        RelOp::Gt => decide(d.lo() > delta, d.hi() <= -delta),
        RelOp::Le => decide(d.hi() <= -delta, d.lo() > delta),
        RelOp::Lt => decide(d.hi() < -delta, d.lo() >= delta),
        RelOp::Eq => decide(
            delta == 0.0 && d.lo() == 0.0 && d.hi() == 0.0,
            d.lo() > delta || d.hi() < -delta,
        ),
    }
}

#[derive(Debug, Clone)]
enum Node {
    Atom(usize, RelOp),
    And(Vec<Node>),
    Or(Vec<Node>),
    Not(Box<Node>),
}

/// A predicate compiled against a fixed variable order.
#[derive(Debug, Clone)]
pub struct CompiledPred {
    tape: Tape,
    root: Node,
}

impl CompiledPred {
    pub fn compile(p: &Pred, vars: &[String]) -> Result<CompiledPred, ExprError> {
        let mut diffs = Vec::new();
        let root = lower(p, &mut diffs);
        Ok(CompiledPred {
            tape: Tape::compile_many(&diffs, vars)?,
            root,
        })
    }

    /// Conjunction of `ps`; the empty conjunction is always true.
    pub fn conjunction(ps: &[Pred], vars: &[String]) -> Result<CompiledPred, ExprError> {
        CompiledPred::compile(&Pred::And(ps.to_vec()), vars)
    }

    pub fn eval(&self, vars: &[Interval], delta: f64) -> Truth {
        if self.tape.n_outputs() == 0 {
            return eval_node(&self.root, &[], delta);
        }
        match self.tape.eval(vars) {
            Ok(d) => eval_node(&self.root, &d, delta),
            Err(_) => Truth::Unknown,
        }
    }

    pub fn holds_f64(&self, vars: &[f64]) -> bool {
        self.holds_f64_with(vars, &mut Vec::new(), &mut Vec::new())
    }

    /// As [`CompiledPred::holds_f64`] with caller-provided scratch space.
    pub fn holds_f64_with(&self, vars: &[f64], slots: &mut Vec<f64>, d: &mut Vec<f64>) -> bool {
        self.tape.eval_f64_into(vars, slots, d);
        holds_node(&self.root, d)
    }
}

fn lower(p: &Pred, diffs: &mut Vec<Expr>) -> Node {
    match p {
        Pred::Atom { lhs, op, rhs } => {
            let d = match rhs.as_const() {
                Some(c) if c == 0.0 => lhs.clone(),
                _ => Expr::Sub(Box::new(lhs.clone()), Box::new(rhs.clone())),
            };
            diffs.push(d);
            Node::Atom(diffs.len() - 1, *op)
        }
        Pred::And(ps) => Node::And(ps.iter().map(|q| lower(q, diffs)).collect()),
        Pred::Or(ps) => Node::Or(ps.iter().map(|q| lower(q, diffs)).collect()),
        Pred::Not(q) => Node::Not(Box::new(lower(q, diffs))),
    }
}

fn eval_node(n: &Node, d: &[Interval], delta: f64) -> Truth {
    match n {
        Node::Atom(i, op) => atom_truth(d[*i], *op, delta),
        Node::And(ns) => ns
            .iter()
            .fold(Truth::True, |acc, m| acc.and(eval_node(m, d, delta))),
        Node::Or(ns) => ns
            .iter()
            .fold(Truth::False, |acc, m| acc.or(eval_node(m, d, delta))),
        Node::Not(m) => eval_node(m, d, delta).not(),
    }
}

fn holds_node(n: &Node, d: &[f64]) -> bool {
    match n {
        Node::Atom(i, op) => op.holds(d[*i], 0.0),
        Node::And(ns) => ns.iter().all(|m| holds_node(m, d)),
        Node::Or(ns) => ns.iter().any(|m| holds_node(m, d)),
        Node::Not(m) => !holds_node(m, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use proptest::prelude::*;

    fn op() -> impl Strategy<Value = RelOp> {
        prop_oneof![
            Just(RelOp::Lt),
            Just(RelOp::Le),
            Just(RelOp::Gt),
            Just(RelOp::Ge),
            Just(RelOp::Eq)
        ]
    }

    #[test]
    fn atoms_with_margin() {
        let d = Interval::new(0.5, 1.0);
        assert_eq!(atom_truth(d, RelOp::Ge, 0.1), Truth::True);
        assert_eq!(atom_truth(d, RelOp::Ge, 0.6), Truth::Unknown);
        assert_eq!(atom_truth(d, RelOp::Lt, 0.1), Truth::False);
        assert_eq!(atom_truth(Interval::new(-0.05, 0.05), RelOp::Ge, 0.1), Truth::Unknown);
        assert_eq!(atom_truth(Interval::ZERO, RelOp::Eq, 0.0), Truth::True);
        assert_eq!(atom_truth(Interval::ZERO, RelOp::Eq, 1e-3), Truth::Unknown);
        assert_eq!(atom_truth(Interval::new(2.0, 3.0), RelOp::Eq, 1e-3), Truth::False);
    }

    #[test]
    fn compiled_predicates() {
        let text = "[0,1]time;\n[0,10]x;\n[0,1]p;\n{ mode1; flow: d/dt[x]=1; }\n\
                    init: @1(x = 0);\ngoal: @1(and (x >= 2) (not (p > 0.5)));\n";
        let m = parse_model(text).unwrap();
        let vars = vec!["x".to_string(), "p".to_string()];
        let g = CompiledPred::compile(&m.goal.pred, &vars).unwrap();
        assert_eq!(g.eval(&[Interval::new(3.0, 4.0), Interval::new(0.0, 0.2)], 0.01), Truth::True);
        assert_eq!(g.eval(&[Interval::new(3.0, 4.0), Interval::new(0.0, 0.7)], 0.01), Truth::Unknown);
        assert_eq!(g.eval(&[Interval::new(0.0, 1.0), Interval::new(0.0, 0.7)], 0.01), Truth::False);
        assert!(g.holds_f64(&[3.0, 0.1]));
        assert!(!g.holds_f64(&[3.0, 0.9]));
        let empty = CompiledPred::conjunction(&[], &vars).unwrap();
        assert_eq!(empty.eval(&[Interval::ZERO, Interval::ZERO], 0.1), Truth::True);
    }

    proptest! {
        #[test]
        fn decided_atoms_agree_with_points(lo in -2.0f64..2.0, w in 0.0f64..2.0, s in 0.0f64..=1.0,
                                           delta in 0.0f64..0.5, op in op()) {
            let d = Interval::new(lo, lo + w);
            let x = (lo + s * w).min(d.hi());
            match atom_truth(d, op, delta) {
                Truth::True => prop_assert!(op.holds(x, 0.0)),
                Truth::False => prop_assert!(!op.holds(x, 0.0)),
                Truth::Unknown => {}
            }
        }

        #[test]
        fn smaller_margin_only_decides_more(lo in -2.0f64..2.0, w in 0.0f64..2.0,
                                            d1 in 0.0f64..0.5, f in 0.0f64..=1.0, op in op()) {
            let d = Interval::new(lo, lo + w);
            let coarse = atom_truth(d, op, d1);
            let fine = atom_truth(d, op, d1 * f);
            prop_assert!(coarse == Truth::Unknown || coarse == fine);
        }
    }
}
