//! Validated one-dimensional quadrature.
//!
//! Cell enclosures come from the interval Simpson 1/3 rule with its Lagrange
//! remainder. [`integrate_adaptive`] bisects cells until each enclosure is
//! narrow relative to its share of the base interval, so the widths add up to
//! at most the requested precision.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, ExprError, Tape, DEFAULT_NODE_CAP};
use crate::interval::{div_down, mul_down, sub_down, sub_up, Interval, IntervalError};
use crate::model::{RandomParam, Support};

/// Default cap on the number of partition cells.
pub const DEFAULT_CELL_CAP: usize = 1_000_000;

const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("{what} exceeded the limit of {limit}")]
    ResourceLimit { what: &'static str, limit: usize },
    #[error("box edge {value} of `{var}` is not a partition cell boundary")]
    Alignment { var: String, value: f64 },
}

impl From<IntervalError> for IntegrateError {
    fn from(e: IntervalError) -> Self {
        IntegrateError::Expr(ExprError::Interval(e))
    }
}

/// A density (or any integrand) prepared for repeated cell enclosures.
#[derive(Debug, Clone)]
pub struct Integrand {
    f: Tape,
    f4: Option<Tape>,
}

impl Integrand {
    /// Compiles `f` and its fourth derivative in `var`. If the derivative
    /// is unavailable (node cap, `abs`) cells fall back to the rectangle
    /// enclosure `w * [f](cell)`.
    pub fn new(f: &Expr, var: &str) -> Result<Integrand, IntegrateError> {
        Integrand::with_node_cap(f, var, DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(f: &Expr, var: &str, cap: usize) -> Result<Integrand, IntegrateError> {
        let vars = [var.to_string()];
        let f = f.simplify();
        let tape = Tape::compile(&f, &vars)?;
        let f4 = match f.nth_derivative(var, 4, cap) {
            Ok(d) => Some(Tape::compile(&d, &vars)?),
            Err(ExprError::NodeCap(_)) | Err(ExprError::NonDifferentiable(_)) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Integrand { f: tape, f4 })
    }

    pub fn for_param(p: &RandomParam) -> Result<Integrand, IntegrateError> {
        Integrand::new(&p.density, &p.name)
    }

    /// True when the remainder term is unavailable and the coarse
    /// rectangle enclosure is used instead.
    pub fn uses_fallback(&self) -> bool {
        self.f4.is_none()
    }

    pub fn eval(&self, x: Interval) -> Result<Interval, IntegrateError> {
        Ok(self.f.eval1(&[x])?)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.f.eval1_f64(&[x])
    }

    /// Enclosure of the integral over `cell`.
    pub fn cell_enclosure(&self, cell: Interval) -> Result<Interval, IntegrateError> {
        let w = Interval::point(cell.hi()) - Interval::point(cell.lo());
        match &self.f4 {
            Some(f4) => simpson(&self.f, f4, cell, w),
            None => Ok(w * self.f.eval1(&[cell])?),
        }
    }
}

fn simpson(f: &Tape, f4: &Tape, cell: Interval, w: Interval) -> Result<Interval, IntegrateError> {
    let fa = f.eval1(&[Interval::point(cell.lo())])?;
    let fm = f.eval1(&[cell.midpoint_enclosure()])?;
    let fb = f.eval1(&[Interval::point(cell.hi())])?;
    let rule = (w * (fa + Interval::point(4.0) * fm + fb)).checked_div(&Interval::point(6.0))?;
    let w5 = w.powi(5)?;
    let remainder = w5.checked_div(&Interval::point(2880.0))? * f4.eval1(&[cell])?;
    Ok(rule - remainder)
}

/// Interval Simpson rule with remainder: encloses the integral of `f` over
/// `cell` given the fourth derivative `f4` (both in one free variable).
pub fn simpson_enclosure(f: &Expr, f4: &Expr, cell: Interval) -> Result<Interval, IntegrateError> {
    let vars = f
        .variables()
        .into_iter()
        .chain(f4.variables())
        .fold(Vec::<String>::new(), |mut acc, v| {
            if !acc.contains(&v) {
                acc.push(v);
            }
            acc
        });
    if vars.len() > 1 {
        return Err(ExprError::UnboundVariable(vars[1].clone()).into());
    }
    let vars = if vars.is_empty() { vec!["x".to_string()] } else { vars };
    let tf = Tape::compile(f, &vars)?;
    let tf4 = Tape::compile(f4, &vars)?;
    let w = Interval::point(cell.hi()) - Interval::point(cell.lo());
    simpson(&tf, &tf4, cell, w)
}

/// One partition cell and the enclosure of the integral over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x: Interval,
    pub mass: Interval,
}

/// A partition of `base` into cells with integral enclosures, sorted by
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub base: Interval,
    pub cells: Arc<[Cell]>,
    total: Interval,
}

impl Partition {
    /// Enclosure of the integral over the whole base interval.
    pub fn total(&self) -> Interval {
        self.total
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sum of the cell enclosure widths.
    pub fn width_sum(&self) -> f64 {
        self.cells.iter().map(|c| c.mass.width()).sum()
    }

    /// Writes `cell_lo,cell_hi,enc_lo,enc_hi` rows.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "cell_lo,cell_hi,enc_lo,enc_hi")?;
        for c in self.cells.iter() {
            writeln!(w, "{:?},{:?},{:?},{:?}", c.x.lo(), c.x.hi(), c.mass.lo(), c.mass.hi())?;
        }
        Ok(())
    }

    /// Index range of the cells exactly covering `x`.
    pub fn cell_range(&self, x: Interval) -> Option<std::ops::Range<usize>> {
        let start = self.cells.partition_point(|c| c.x.lo() < x.lo());
        let end = self.cells.partition_point(|c| c.x.hi() <= x.hi());
        let aligned = start < end
            && self.cells[start].x.lo() == x.lo()
            && self.cells[end - 1].x.hi() == x.hi();
        aligned.then_some(start..end)
    }
}

struct Node {
    cell: Interval,
    enc: Interval,
    children: Option<(usize, usize)>,
}

/// Adaptive validated integration over `base` to absolute precision `eps`.
pub fn integrate_adaptive(
    f: &Integrand,
    base: Interval,
    eps: f64,
) -> Result<Partition, IntegrateError> {
    integrate_adaptive_capped(f, base, eps, DEFAULT_CELL_CAP)
}

/// As [`integrate_adaptive`] with an explicit cell cap.
///
/// A cell is accepted when `width(enc) <= eps * width(cell) / width(base)`.
/// Totals are summed along the bisection tree and intersected with each
/// parent's own enclosure, so a run at a smaller `eps` (which splits a
/// superset of cells) returns a subset of the coarser run's total.
pub fn integrate_adaptive_capped(
    f: &Integrand,
    base: Interval,
    eps: f64,
    cap: usize,
) -> Result<Partition, IntegrateError> {
    assert!(eps > 0.0 && base.is_finite() && base.width() > 0.0);
    let eps = eps.next_down();
    let base_w = sub_up(base.hi(), base.lo());
    let mut nodes = vec![Node {
        cell: base,
        enc: f.cell_enclosure(base)?,
        children: None,
    }];
    let mut leaves = 1usize;
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        let cell = nodes[i].cell;
        let share = div_down(sub_down(cell.hi(), cell.lo()), base_w);
        if nodes[i].enc.width() <= mul_down(eps, share) {
            continue;
        }
        let (left, right) = cell.bisect();
        if left.width() == 0.0 || right.width() == 0.0 {
            return Err(IntegrateError::ResourceLimit {
                what: "partition resolution",
                limit: leaves,
            });
        }
        leaves += 1;
        if leaves > cap {
            return Err(IntegrateError::ResourceLimit {
                what: "partition cell count",
                limit: cap,
            });
        }
        let l = nodes.len();
        for half in [left, right] {
            let enc = f.cell_enclosure(half)?;
            nodes.push(Node {
                cell: half,
                enc,
                children: None,
            });
        }
        nodes[i].children = Some((l, l + 1));
        stack.push(l + 1);
        stack.push(l);
    }
    let mut sums = vec![Interval::ZERO; nodes.len()];
    let mut cells = Vec::with_capacity(leaves);
    for i in (0..nodes.len()).rev() {
        sums[i] = match nodes[i].children {
            None => {
                cells.push(Cell {
                    x: nodes[i].cell,
                    mass: nodes[i].enc,
                });
                nodes[i].enc
            }
            Some((a, b)) => {
                let s = sums[a] + sums[b];
                s.intersect(&nodes[i].enc).unwrap_or(s)
            }
        };
    }
    cells.sort_by(|a, b| a.x.lo().total_cmp(&b.x.lo()));
    Ok(Partition {
        base,
        cells: cells.into(),
        total: sums[0],
    })
}

/// An interval `[a, b]` whose validated mass has lower bound at least
/// `1 - eps_inf`. Bounded supports are returned unchanged.
pub fn support_bounds(p: &RandomParam, eps_inf: f64) -> Result<Interval, IntegrateError> {
    let (lower, upper, seed) = match &p.support {
        Support::Bounded(x) => return Ok(*x),
        Support::Unbounded { lower, upper, seed } => (*lower, *upper, *seed),
    };
    let f = Integrand::for_param(p)?;
    let center = seed.midpoint();
    let mut half = (seed.hi() - center).max(center - seed.lo());
    let target = 1.0 - eps_inf;
    for _ in 0..MAX_DOUBLINGS {
        let x = Interval::new((center - half).max(lower), (center + half).min(upper));
        if x.is_finite() {
            // coarse pass: precision only needs to separate the mass from the target
            let coarse = integrate_adaptive(&f, x, eps_inf / 4.0);
            if let Ok(part) = coarse {
                if part.total().lo() >= target {
                    return Ok(x);
                }
            }
        }
        half *= 2.0;
    }
    Err(IntegrateError::ResourceLimit {
        what: "support doubling",
        limit: MAX_DOUBLINGS,
    })
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Encloses `sum_{i=1..l} C(l,i) eps^i`.
fn binomial_sum(l: u32, eps: f64) -> Interval {
    let e = Interval::point(eps);
    let mut acc = Interval::ZERO;
    let mut power = Interval::ONE;
    for i in 1..=l {
        power = power * e;
        acc = acc + Interval::point(binomial(l, i)) * power;
    }
    acc
}

/// Largest `eps` with `(1 + eps)^l - 1 <= eps_prod`, verified in interval
/// arithmetic.
pub fn per_var_epsilon(l: u32, eps_prod: f64) -> f64 {
    assert!(l >= 1 && eps_prod > 0.0 && eps_prod <= 1.0);
    let ok = |e: f64| binomial_sum(l, e).hi() <= eps_prod;
    let mut e = (eps_prod.ln_1p() / l as f64).exp_m1();
    while !ok(e) {
        e = e.next_down();
    }
    while ok(e.next_up()) {
        e = e.next_up();
    }
    e
}

/// Split of a total precision between tail truncation and partitioning.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpsilonBudget {
    pub total: f64,
    pub t: f64,
    /// Mass allowed outside the truncated supports (all variables together).
    pub eps_inf: f64,
    pub eps_prob: f64,
    pub l: u32,
    /// Quadrature precision for each continuous random variable.
    pub per_var: f64,
}

impl EpsilonBudget {
    /// `eps_inf = t * eps`, `eps_prob = (1 - t) * eps`. The product of
    /// `l` partitions is kept within a quarter of `eps_prob`; the rest is
    /// left for boxes that remain undecided.
    pub fn new(eps: f64, t: f64, l: u32) -> EpsilonBudget {
        assert!(eps > 0.0 && (0.0..1.0).contains(&t));
        let eps_inf = mul_down(t, eps);
        let eps_prob = mul_down(1.0 - t, eps);
        let per_var = if l == 0 {
            0.0
        } else {
            per_var_epsilon(l, (eps_prob / 4.0).min(1.0))
        };
        EpsilonBudget {
            total: eps,
            t,
            eps_inf,
            eps_prob,
            l,
            per_var,
        }
    }

    /// Tail budget for each variable.
    pub fn eps_inf_per_var(&self) -> f64 {
        if self.l == 0 {
            self.eps_inf
        } else {
            self.eps_inf / self.l as f64
        }
    }
}

/// Measure of a box under independent densities: the product over
/// dimensions of the summed enclosures of the cells spanning that
/// dimension, clipped to `[0, 1]`.
pub fn box_measure(
    partitions: &[(&str, &Partition)],
    dims: &[Interval],
) -> Result<Interval, IntegrateError> {
    assert_eq!(partitions.len(), dims.len());
    let mut m = Interval::ONE;
    for ((var, p), x) in partitions.iter().zip(dims) {
        let range = p.cell_range(*x).ok_or_else(|| IntegrateError::Alignment {
            var: var.to_string(),
            value: x.lo(),
        })?;
        m = m * cells_mass(&p.cells[range]);
    }
    Ok(m.clamp_to(&Interval::UNIT))
}

/// Sum of the enclosures of a run of cells.
pub fn cells_mass(cells: &[Cell]) -> Interval {
    cells.iter().fold(Interval::ZERO, |acc, c| acc + c.mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::model::{normal_density, DensityForm};
    use proptest::prelude::*;
    use statrs::function::erf::erf;

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }

    fn std_normal() -> Integrand {
        Integrand::new(&normal_density("x", 0.0, 1.0), "x").unwrap()
    }

    fn normal_param(mean: f64, variance: f64) -> RandomParam {
        let s = variance.sqrt();
        RandomParam {
            name: "r".into(),
            density: normal_density("r", mean, variance),
            form: DensityForm::Normal { mean, variance },
            support: Support::Unbounded {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                seed: Interval::new(mean - 4.0 * s, mean + 4.0 * s),
            },
        }
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let c = simpson_enclosure(&parse_expr("2.5").unwrap(), &parse_expr("0").unwrap(), Interval::UNIT)
            .unwrap();
        assert_eq!(c, Interval::point(2.5));
        let cube = parse_expr("x^3").unwrap();
        let e = simpson_enclosure(&cube, &parse_expr("0").unwrap(), Interval::new(0.0, 2.0)).unwrap();
        assert!(e.contains(4.0) && e.width() < 1e-14);
    }

    #[test]
    fn simpson_encloses_normal_mass_on_unit_ball() {
        let f = normal_density("x", 0.0, 1.0);
        let f4 = f.nth_derivative("x", 4, DEFAULT_NODE_CAP).unwrap();
        let e = simpson_enclosure(&f, &f4, Interval::new(-1.0, 1.0)).unwrap();
        let oracle = phi(1.0) - phi(-1.0);
        assert!((oracle - 0.682_689_492_1).abs() < 1e-10);
        assert!(e.contains(oracle), "{e:?}");
    }

    #[test]
    fn adaptive_on_constant_density_uses_one_cell() {
        let f = Integrand::new(&parse_expr("1").unwrap(), "x").unwrap();
        let p = integrate_adaptive(&f, Interval::UNIT, 1e-6).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.total().contains(1.0) && p.total().width() <= 1e-6);
    }

    #[test]
    fn adaptive_on_normal_over_four_sigma() {
        let p = integrate_adaptive(&std_normal(), Interval::new(-4.0, 4.0), 1e-6).unwrap();
        let oracle = phi(4.0) - phi(-4.0);
        assert!((oracle - 0.999_936_657_5).abs() < 1e-10);
        assert!(p.total().contains(oracle));
        assert!(p.total().width() <= 1e-6);
        assert!(p.width_sum() <= 1e-6);
        for w in p.cells.windows(2) {
            assert_eq!(w[0].x.hi(), w[1].x.lo());
        }
        assert_eq!(p.cells[0].x.lo(), -4.0);
        assert_eq!(p.cells[p.len() - 1].x.hi(), 4.0);
        for c in p.cells.iter() {
            assert!(c.mass.contains(phi(c.x.hi()) - phi(c.x.lo())) || c.mass.width() > 0.0);
        }
    }

    #[test]
    fn cell_cap_signals_resource_limit() {
        let r = integrate_adaptive_capped(&std_normal(), Interval::new(-4.0, 4.0), 1e-12, 10);
        assert!(matches!(r, Err(IntegrateError::ResourceLimit { .. })));
    }

    #[test]
    fn fallback_without_fourth_derivative_is_still_sound() {
        let f = Integrand::new(&parse_expr("abs(x)").unwrap(), "x").unwrap();
        assert!(f.uses_fallback());
        let p = integrate_adaptive(&f, Interval::new(-1.0, 1.0), 1e-3).unwrap();
        assert!(p.total().contains(1.0));
        let g = Integrand::with_node_cap(&normal_density("x", 0.0, 1.0), "x", 5).unwrap();
        assert!(g.uses_fallback());
        let p = integrate_adaptive(&g, Interval::new(-1.0, 1.0), 1e-3).unwrap();
        assert!(p.total().contains(phi(1.0) - phi(-1.0)));
    }

    #[test]
    fn support_of_bounded_and_normal_params() {
        let u = RandomParam {
            name: "u".into(),
            density: parse_expr("1").unwrap(),
            form: DensityForm::Uniform { a: 0.0, b: 1.0 },
            support: Support::Bounded(Interval::UNIT),
        };
        assert_eq!(support_bounds(&u, 0.5).unwrap(), Interval::UNIT);
        let s = support_bounds(&normal_param(0.0, 1.0), 1e-6).unwrap();
        assert!(Interval::new(-4.9, 4.9).subset_of(&s), "{s:?}");
        assert!(phi(s.hi()) - phi(s.lo()) >= 1.0 - 1e-6);
        let s = support_bounds(&normal_param(20.0, 1.0), 1e-9).unwrap();
        assert!(Interval::new(14.0, 26.0).subset_of(&s), "{s:?}");
    }

    #[test]
    fn normal_mass_over_validated_support() {
        let p = normal_param(10.96, 1.0);
        let s = support_bounds(&p, 1e-6).unwrap();
        let part = integrate_adaptive(&Integrand::for_param(&p).unwrap(), s, 1e-4).unwrap();
        assert!(part.total().width() <= 1e-4);
        let oracle = phi(s.hi() - 10.96) - phi(s.lo() - 10.96);
        assert!(part.total().contains(oracle));
        assert!(part.total().hi() >= 1.0 - 1e-6);
    }

    #[test]
    fn per_var_epsilon_examples() {
        assert_eq!(per_var_epsilon(1, 0.1), 0.1);
        let e2 = per_var_epsilon(2, 0.21);
        assert!((e2 - 0.1).abs() < 1e-15, "{e2}");
        let e3 = per_var_epsilon(3, 1e-3);
        assert!((e3 - 3.332e-4).abs() < 1e-7, "{e3}");
        assert!(3.0 * e3 + 3.0 * e3 * e3 + e3 * e3 * e3 <= 1e-3);
        // the next float up fails the bound
        assert!(binomial_sum(3, e3.next_up()).hi() > 1e-3);
    }

    #[test]
    fn budget_split() {
        let b = EpsilonBudget::new(1e-3, 0.1, 2);
        assert!(b.eps_inf + b.eps_prob <= 1e-3);
        assert!(binomial_sum(2, b.per_var).hi() <= b.eps_prob);
    }

    #[test]
    fn box_measure_alignment_and_values() {
        let u = Integrand::new(&parse_expr("1").unwrap(), "u").unwrap();
        let pu = integrate_adaptive_capped(&u, Interval::UNIT, 1e-9, 100).unwrap();
        assert!(box_measure(&[("u", &pu)], &[Interval::UNIT]).unwrap().contains(1.0));
        // force a split so that 0.5 is a boundary
        let parts = Partition {
            base: Interval::UNIT,
            cells: vec![
                Cell { x: Interval::new(0.0, 0.5), mass: u.cell_enclosure(Interval::new(0.0, 0.5)).unwrap() },
                Cell { x: Interval::new(0.5, 1.0), mass: u.cell_enclosure(Interval::new(0.5, 1.0)).unwrap() },
            ]
            .into(),
            total: Interval::ONE,
        };
        assert!(box_measure(&[("u", &parts)], &[Interval::new(0.0, 0.5)]).unwrap().contains(0.5));
        assert!(matches!(
            box_measure(&[("u", &parts)], &[Interval::new(0.0, 0.3)]),
            Err(IntegrateError::Alignment { .. })
        ));

        let n = std_normal();
        let s = Interval::new(-8.0, 8.0);
        let p = integrate_adaptive(&n, s, 1e-6).unwrap();
        let zero = p.cells.iter().position(|c| c.x.lo() == 0.0).expect("0 is a bisection point");
        let half = Interval::new(0.0, 8.0);
        assert!(zero > 0);
        let m = box_measure(&[("x", &p), ("y", &p)], &[half, half]).unwrap();
        assert!(m.contains(0.25) || (m.lo() - 0.25).abs() < 1e-6, "{m:?}");
        let full = box_measure(&[("x", &p)], &[s]).unwrap();
        assert!(full.lo() <= 1.0);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let p = integrate_adaptive(&std_normal(), Interval::new(-1.0, 1.0), 1e-4).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), p.len() + 1);
        assert!(text.starts_with("cell_lo,cell_hi,enc_lo,enc_hi"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn antiderivative_oracle_inside_every_enclosure(
            kind in 0usize..4, a in -3.0f64..0.0, w in 0.1f64..3.0, eps_exp in 2i32..7,
        ) {
            let b = a + w;
            let (f, anti): (&str, fn(f64) -> f64) = match kind {
                0 => ("x^4 - 2*x", |x: f64| x.powi(5) / 5.0 - x * x),
                1 => ("exp(x)", f64::exp),
                2 => ("cos(x)", f64::sin),
                _ => ("exp(-x^2/2) / sqrt(2*pi)", phi),
            };
            let eps = 10f64.powi(-eps_exp);
            let g = Integrand::new(&parse_expr(f).unwrap(), "x").unwrap();
            let p = integrate_adaptive(&g, Interval::new(a, b), eps).unwrap();
            let slack = 1e-14 * (1.0 + anti(b).abs() + anti(a).abs());
            let total = p.total().inflate(slack);
            prop_assert!(total.contains(anti(b) - anti(a)));
            prop_assert!(p.total().width() <= eps);
            prop_assert!(p.width_sum() <= eps);
            for c in p.cells.iter() {
                let s = 1e-14 * (1.0 + anti(c.x.hi()).abs() + anti(c.x.lo()).abs());
                prop_assert!(c.mass.inflate(s).contains(anti(c.x.hi()) - anti(c.x.lo())));
            }
        }

        #[test]
        fn refinement_is_monotone(a in -3.0f64..0.0, w in 0.5f64..4.0, e1 in 3i32..6, extra in 1i32..3) {
            let g = std_normal();
            let base = Interval::new(a, a + w);
            let coarse = integrate_adaptive(&g, base, 10f64.powi(-e1)).unwrap();
            let fine = integrate_adaptive(&g, base, 10f64.powi(-e1 - extra)).unwrap();
            let widened = Interval::new(coarse.total().lo().next_down(), coarse.total().hi().next_up());
            prop_assert!(fine.total().subset_of(&widened), "{:?} vs {:?}", fine.total(), coarse.total());
        }

        #[test]
        fn per_var_epsilon_verifies(l in 1u32..8, e in 1e-9f64..1.0) {
            let v = per_var_epsilon(l, e);
            prop_assert!(v > 0.0);
            prop_assert!(binomial_sum(l, v).hi() <= e);
        }

        #[test]
        fn box_measure_is_additive(k in 1usize..40, j in 1usize..40) {
            let p = integrate_adaptive(&std_normal(), Interval::new(-6.0, 6.0), 1e-7).unwrap();
            let n = p.len();
            let (lo_i, hi_i) = (k.min(n - 1) / 2, n - 1 - (j.min(n - 1) / 2));
            prop_assume!(lo_i < hi_i);
            let mid_i = (lo_i + hi_i) / 2 + 1;
            let whole = Interval::new(p.cells[lo_i].x.lo(), p.cells[hi_i].x.hi());
            let left = Interval::new(p.cells[lo_i].x.lo(), p.cells[mid_i].x.lo());
            let right = Interval::new(p.cells[mid_i].x.lo(), p.cells[hi_i].x.hi());
            prop_assume!(left.width() > 0.0 && right.width() > 0.0);
            let mw = box_measure(&[("x", &p)], &[whole]).unwrap();
            let ml = box_measure(&[("x", &p)], &[left]).unwrap();
            let mr = box_measure(&[("x", &p)], &[right]).unwrap();
            // summation order differs between the two sides by at most one rounding per cell
            let rounding = (hi_i - lo_i + 1) as f64 * f64::EPSILON;
            prop_assert!(mw.subset_of(&(ml + mr).inflate(rounding)), "{:?} vs {:?}", mw, ml + mr);
        }
    }
}
