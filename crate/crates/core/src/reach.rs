//! Probability enclosures by refinement of parameter boxes.
//!
//! Each continuous random parameter gets a truncated support and a
//! validated partition of its density. Boxes over the random (and
//! nondeterministic) parameters are classified as inside, outside or mixed
//! with respect to the reachability question; inside mass accumulates into
//! the lower bound, outside mass is removed from the upper bound, and mixed
//! boxes are split. Boxes are processed in rounds; classification runs in
//! parallel but masses are accumulated in a fixed order, so results do not
//! depend on the number of worker threads.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decide::{refine_precision, BoxClass, DecideError, Decider, Precision, PrecisionLimits, Steps};
use crate::flowenc::{FlowError, OdeConfig};
use crate::integrate::{
    cells_mass, integrate_adaptive, support_bounds, EpsilonBudget, Integrand, IntegrateError, Partition,
};
use crate::interval::Interval;
use crate::model::{Model, ModelType};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error(transparent)]
    Decide(#[from] DecideError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("no dimension of the box can be split")]
    DegenerateBox,
}

impl From<FlowError> for ReachError {
    fn from(e: FlowError) -> Self {
        ReachError::Decide(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branching {
    #[default]
    Full,
    Widest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The requested width was not reached because undecided boxes could
    /// not be refined further.
    EpsilonUnmet,
    ResourceLimit,
}

impl Status {
    fn worst(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (ResourceLimit, _) | (_, ResourceLimit) => ResourceLimit,
            (EpsilonUnmet, _) | (_, EpsilonUnmet) => EpsilonUnmet,
            _ => Ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReachOptions {
    pub k: usize,
    pub steps: Steps,
    /// Fraction of the precision spent on truncating unbounded supports.
    pub tail_frac: f64,
    pub branching: Branching,
    pub max_boxes: usize,
    pub precision: Precision,
    pub limits: PrecisionLimits,
    #[serde(skip)]
    pub ode: OdeConfig,
    /// Extra precision refinements tried on a single undecided box of a
    /// model without random parameters.
    pub ha_refinements: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            k: 0,
            steps: Steps::Exact,
            tail_frac: 0.1,
            branching: Branching::Full,
            max_boxes: 2_000_000,
            precision: Precision::default(),
            limits: PrecisionLimits::default(),
            ode: OdeConfig::default(),
            ha_refinements: 12,
        }
    }
}

/// Lower and upper probability bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbEnclosure {
    pub p_lower: Interval,
    /// One plus the tail term minus the outside mass, before clamping.
    pub p_upper: Interval,
    pub reported: Interval,
}

impl ProbEnclosure {
    pub fn new(p_lower: Interval, p_upper: Interval) -> ProbEnclosure {
        let lo = p_lower.lo().clamp(0.0, 1.0);
        let hi = p_upper.hi().clamp(lo, 1.0);
        ProbEnclosure {
            p_lower,
            p_upper,
            reported: Interval::new(lo, hi),
        }
    }

    fn exact(p: f64) -> ProbEnclosure {
        let x = Interval::point(p);
        ProbEnclosure::new(x, x)
    }
}

/// One random dimension of a box: its extent, an enclosure of its mass,
/// and, when it is aligned with the partition, the cells it spans.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDim {
    pub x: Interval,
    pub mass: Interval,
    cells: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub random: Vec<RandomDim>,
    pub nondet: Vec<Interval>,
    pub prec: Precision,
    splits: usize,
}

impl ParamBox {
    /// Parameter values in [`Model::param_names`] order.
    pub fn params(&self) -> Vec<Interval> {
        self.random.iter().map(|r| r.x).chain(self.nondet.iter().copied()).collect()
    }

    pub fn measure(&self) -> Interval {
        self.random
            .iter()
            .fold(Interval::ONE, |m, r| m * r.mass)
            .clamp_to(&Interval::UNIT)
    }

    /// Largest side length over all dimensions.
    pub fn size(&self) -> f64 {
        self.random
            .iter()
            .map(|r| r.x.width())
            .chain(self.nondet.iter().map(Interval::width))
            .fold(0.0, f64::max)
    }

    /// True when every random dimension lies within one partition cell.
    fn below_cells(&self) -> bool {
        self.random
            .iter()
            .all(|r| r.cells.as_ref().map_or(true, |c| c.len() <= 1))
    }
}

/// Truncated supports, partitions and densities of the continuous random
/// parameters.
#[derive(Debug, Clone)]
pub struct MeasureSpace {
    pub names: Vec<String>,
    pub partitions: Vec<Partition>,
    integrands: Vec<Integrand>,
}

impl MeasureSpace {
    pub fn new(m: &Model, budget: &EpsilonBudget) -> Result<MeasureSpace, ReachError> {
        let mut names = Vec::new();
        let mut partitions = Vec::new();
        let mut integrands = Vec::new();
        for p in &m.continuous_randoms {
            let f = Integrand::for_param(p)?;
            let support = support_bounds(p, budget.eps_inf_per_var())?;
            partitions.push(integrate_adaptive(&f, support, budget.per_var)?);
            integrands.push(f);
            names.push(p.name.clone());
        }
        Ok(MeasureSpace {
            names,
            partitions,
            integrands,
        })
    }

    /// `1 - prod of partition totals`: mass outside the truncated supports.
    pub fn tail(&self) -> Interval {
        Interval::ONE - self.partitions.iter().map(Partition::total).product::<Interval>()
    }

    pub fn root(&self, nondet: &[Interval], prec: Precision) -> ParamBox {
        ParamBox {
            random: self
                .partitions
                .iter()
                .map(|p| RandomDim {
                    x: p.base,
                    mass: p.total(),
                    cells: Some(0..p.len()),
                })
                .collect(),
            nondet: nondet.to_vec(),
            prec,
            splits: 0,
        }
    }

    fn split_random(&self, i: usize, d: &RandomDim) -> Result<Option<(RandomDim, RandomDim)>, ReachError> {
        let part = &self.partitions[i];
        if let Some(r) = &d.cells {
            if r.len() >= 2 {
                let mid = d.x.midpoint();
                let cells = &part.cells[r.clone()];
                let j = cells
                    .partition_point(|c| c.x.hi() <= mid)
                    .clamp(1, r.len() - 1);
                let (a, b) = (r.start..r.start + j, r.start + j..r.end);
                let dim = |rng: Range<usize>| RandomDim {
                    x: Interval::new(part.cells[rng.start].x.lo(), part.cells[rng.end - 1].x.hi()),
                    mass: cells_mass(&part.cells[rng.clone()]),
                    cells: Some(rng),
                };
                return Ok(Some((dim(a), dim(b))));
            }
        }
        let (l, r) = d.x.bisect();
        if l.width() == 0.0 || r.width() == 0.0 {
            return Ok(None);
        }
        let cap = Interval::new(0.0, d.mass.hi().max(0.0));
        let piece = |x: Interval| -> Result<RandomDim, ReachError> {
            let m = self.integrands[i].cell_enclosure(x)?;
            Ok(RandomDim {
                x,
                mass: m.intersect(&cap).unwrap_or(m),
                cells: None,
            })
        };
        Ok(Some((piece(l)?, piece(r)?)))
    }

    /// Splits a box into children whose union is the box.
    pub fn branch(&self, b: &ParamBox, strategy: Branching) -> Result<Vec<ParamBox>, ReachError> {
        let nr = b.random.len();
        let dims = nr + b.nondet.len();
        let chosen: Vec<usize> = match strategy {
            Branching::Full => (0..dims).collect(),
            Branching::Widest => {
                let widths: Vec<f64> = b
                    .random
                    .iter()
                    .map(|r| r.x.width())
                    .chain(b.nondet.iter().map(Interval::width))
                    .collect();
                if dims > 0 && b.splits % (dims + 1) == dims {
                    vec![(b.splits / (dims + 1)) % dims]
                } else {
                    let w = (0..dims).max_by(|&i, &j| widths[i].total_cmp(&widths[j]));
                    w.into_iter().collect()
                }
            }
        };
        let mut out = vec![ParamBox {
            splits: b.splits + 1,
            ..b.clone()
        }];
        let mut any = false;
        for &d in &chosen {
            if d < nr {
                let Some((l, r)) = self.split_random(d, &b.random[d])? else {
                    continue;
                };
                any = true;
                out = out
                    .into_iter()
                    .flat_map(|c| {
                        let mut a = c.clone();
                        let mut z = c;
                        a.random[d] = l.clone();
                        z.random[d] = r.clone();
                        [a, z]
                    })
                    .collect();
            } else {
                let (l, r) = b.nondet[d - nr].bisect();
                if l.width() == 0.0 || r.width() == 0.0 {
                    continue;
                }
                any = true;
                out = out
                    .into_iter()
                    .flat_map(|c| {
                        let mut a = c.clone();
                        let mut z = c;
                        a.nondet[d - nr] = l;
                        z.nondet[d - nr] = r;
                        [a, z]
                    })
                    .collect();
            }
        }
        if any {
            Ok(out)
        } else {
            Err(ReachError::DegenerateBox)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BoxStats {
    pub inside: usize,
    pub outside: usize,
    pub mixed: usize,
    /// Mixed boxes left when the loop ended.
    pub undecided: usize,
}

/// Masses after one round of the refinement loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub pending: usize,
    pub inside: Interval,
    pub outside: Interval,
    pub undecided: Interval,
    pub tail: Interval,
    /// Whether inside + outside + undecided + tail contains 1.
    pub conserved: bool,
    pub reported: Interval,
    pub finest_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub name: String,
    pub support: Interval,
    pub mass: Interval,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchReport {
    pub choice: Vec<(String, f64)>,
    pub weight: Interval,
    pub model_type: ModelType,
    pub enclosure: ProbEnclosure,
    pub status: Status,
    pub budget: Option<EpsilonBudget>,
    pub supports: Vec<SupportReport>,
    pub boxes: BoxStats,
    pub trace: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachReport {
    pub version: u32,
    pub model_type: ModelType,
    pub epsilon: f64,
    pub options: ReachOptions,
    pub reported: Interval,
    pub status: Status,
    pub branches: Vec<BranchReport>,
    pub wall_time_s: Option<f64>,
}

fn decider(m: &Model, opts: &ReachOptions) -> Result<Decider, ReachError> {
    let ode = OdeConfig {
        order: opts.precision.order,
        ..opts.ode
    };
    Ok(Decider::new(m, opts.k, opts.steps, ode, opts.limits.max_order)?)
}

/// A random box together with nondeterministic boxes covering the whole
/// nondeterministic domain, each with its class once known. The random box
/// is inside (outside) only when all of them are.
#[derive(Debug, Clone)]
struct Item {
    rb: ParamBox,
    zs: Vec<(Vec<Interval>, Option<BoxClass>)>,
}

/// Bisects `z`; full branching skips sides already no wider than `min_width`.
fn split_nondet(z: &[Interval], strategy: Branching, min_width: f64) -> Vec<Vec<Interval>> {
    let dims: Vec<usize> = match strategy {
        Branching::Full => (0..z.len()).filter(|&i| z[i].width() > min_width).collect(),
        Branching::Widest => (0..z.len())
            .max_by(|&i, &j| z[i].width().total_cmp(&z[j].width()))
            .into_iter()
            .collect(),
    };
    let mut out = vec![z.to_vec()];
    for d in dims {
        let (l, r) = z[d].bisect();
        if l.width() == 0.0 || r.width() == 0.0 {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|c| {
                let mut a = c.clone();
                let mut b = c;
                a[d] = l;
                b[d] = r;
                [a, b]
            })
            .collect();
    }
    out
}

fn z_size(z: &[Interval]) -> f64 {
    z.iter().map(Interval::width).fold(0.0, f64::max)
}

/// Box refinement for a model with continuous random parameters. Returns
/// the enclosure and its report with an empty discrete choice.
pub fn compute_reach(m: &Model, eps: f64, opts: &ReachOptions) -> Result<BranchReport, ReachError> {
    assert!(eps > 0.0 && eps <= 1.0);
    let l = m.continuous_randoms.len() as u32;
    let budget = EpsilonBudget::new(eps, opts.tail_frac, l);
    let space = MeasureSpace::new(m, &budget)?;
    let dec = decider(m, opts)?;
    let npha = !m.nondet_params.is_empty();
    let tail = space.tail();
    let nondet: Vec<Interval> = m.nondet_params.iter().map(|(_, x)| *x).collect();

    let mut stats = BoxStats::default();
    let mut inside = Interval::ZERO;
    let mut outside = Interval::ZERO;
    let mut stuck = Interval::ZERO;
    let mut stuck_count = 0usize;
    let mut pending = vec![Item {
        rb: space.root(&[], opts.precision),
        zs: vec![(nondet, None)],
    }];
    let mut trace = Vec::new();
    let mut processed = 0usize;
    let mut status = Status::Ok;
    let upper = |out: Interval| Interval::ONE + tail - out;

    for round in 0.. {
        if pending.is_empty() {
            break;
        }
        let jobs: Vec<(usize, usize)> = pending
            .iter()
            .enumerate()
            .flat_map(|(i, it)| {
                it.zs
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, c))| c.is_none())
                    .map(move |(j, _)| (i, j))
            })
            .collect();
        if processed + jobs.len() > opts.max_boxes {
            status = Status::ResourceLimit;
            break;
        }
        processed += jobs.len();
        let classes: Vec<Result<BoxClass, DecideError>> = jobs
            .par_iter()
            .map(|&(i, j)| {
                let it = &pending[i];
                let params: Vec<Interval> = it.rb.params().into_iter().chain(it.zs[j].0.iter().copied()).collect();
                dec.classify(&params, &it.rb.prec)
            })
            .collect();
        for (&(i, j), c) in jobs.iter().zip(classes) {
            pending[i].zs[j].1 = Some(c?);
        }
        let mut next = Vec::new();
        for it in pending {
            let mass = it.rb.measure();
            let all = |k: BoxClass| it.zs.iter().all(|(_, c)| *c == Some(k));
            if all(BoxClass::Inside) {
                stats.inside += 1;
                inside = inside + mass;
                continue;
            }
            if all(BoxClass::Outside) {
                stats.outside += 1;
                outside = outside + mass;
                continue;
            }
            stats.mixed += 1;
            let mut z_split = false;
            let mut zs = Vec::with_capacity(it.zs.len());
            for (z, c) in &it.zs {
                if *c == Some(BoxClass::Mixed) {
                    let parts = if z_size(z) > eps { split_nondet(z, opts.branching, eps) } else { vec![z.clone()] };
                    z_split |= parts.len() > 1;
                    zs.extend(parts.into_iter().map(|p| (p, None)));
                } else {
                    zs.push((z.clone(), *c));
                }
            }
            let any_mixed = it.zs.iter().any(|(_, c)| *c == Some(BoxClass::Mixed));
            let refined = if it.rb.below_cells() {
                refine_precision(&it.rb.prec, &opts.limits).ok()
            } else {
                Some(it.rb.prec)
            };
            // a sub-cell box at the precision floor cannot be decided
            let at_floor = refined.is_none() && !npha;
            let prec = refined.unwrap_or(it.rb.prec);
            let children = if !any_mixed || at_floor || (npha && it.rb.size() <= eps) {
                None
            } else {
                match space.branch(&it.rb, opts.branching) {
                    Ok(c) => Some(c),
                    Err(ReachError::DegenerateBox) => None,
                    Err(e) => return Err(e),
                }
            };
            match children {
                Some(children) => next.extend(children.into_iter().map(|c| Item {
                    rb: ParamBox { prec, ..c },
                    zs: zs.clone(),
                })),
                None if z_split => next.push(Item {
                    rb: ParamBox { prec, ..it.rb.clone() },
                    zs,
                }),
                None => {
                    stuck = stuck + mass;
                    stuck_count += 1;
                }
            }
        }
        pending = next;
        let undecided = pending.iter().fold(stuck, |acc, it| acc + it.rb.measure());
        let enc = ProbEnclosure::new(inside, upper(outside));
        trace.push(RoundRecord {
            round,
            pending: pending.len(),
            inside,
            outside,
            undecided,
            tail,
            conserved: (inside + outside + undecided + tail).contains(1.0),
            reported: enc.reported,
            finest_delta: pending.iter().map(|it| it.rb.prec.delta).fold(f64::INFINITY, f64::min),
        });
        if !npha && enc.reported.width() <= eps {
            break;
        }
    }
    stats.undecided = stuck_count + pending.len();
    let enclosure = ProbEnclosure::new(inside, upper(outside));
    if status == Status::Ok && !npha && enclosure.reported.width() > eps {
        status = Status::EpsilonUnmet;
    }
    Ok(BranchReport {
        choice: vec![],
        weight: Interval::ONE,
        model_type: m.model_type,
        enclosure,
        status,
        budget: Some(budget),
        supports: space
            .names
            .iter()
            .zip(&space.partitions)
            .map(|(n, p)| SupportReport {
                name: n.clone(),
                support: p.base,
                mass: p.total(),
                cells: p.len(),
            })
            .collect(),
        boxes: stats,
        trace,
    })
}

/// A model without random parameters: one box over the nondeterministic
/// parameters, decided as 0, 1 or unknown.
fn compute_ha(m: &Model, opts: &ReachOptions) -> Result<BranchReport, ReachError> {
    let dec = decider(m, opts)?;
    let params: Vec<Interval> = m.nondet_params.iter().map(|(_, x)| *x).collect();
    let mut prec = opts.precision;
    let mut class = dec.classify(&params, &prec)?;
    for _ in 0..opts.ha_refinements {
        if class != BoxClass::Mixed {
            break;
        }
        match refine_precision(&prec, &opts.limits) {
            Ok(p) => prec = p,
            Err(_) => break,
        }
        class = dec.classify(&params, &prec)?;
    }
    let (enclosure, boxes) = match class {
        BoxClass::Outside => (ProbEnclosure::exact(0.0), BoxStats { outside: 1, ..Default::default() }),
        BoxClass::Inside => (ProbEnclosure::exact(1.0), BoxStats { inside: 1, ..Default::default() }),
        BoxClass::Mixed => (
            ProbEnclosure::new(Interval::ZERO, Interval::ONE),
            BoxStats {
                mixed: 1,
                undecided: 1,
                ..Default::default()
            },
        ),
    };
    Ok(BranchReport {
        choice: vec![],
        weight: Interval::ONE,
        model_type: ModelType::HA,
        enclosure,
        status: Status::Ok,
        budget: None,
        supports: vec![],
        boxes,
        trace: vec![],
    })
}

/// Enumerates the outcomes of the discrete parameters, computes an
/// enclosure for each reduced model and sums them with their weights.
pub fn compute_main(m: &Model, eps: f64, opts: &ReachOptions) -> Result<ReachReport, ReachError> {
    let start = Instant::now();
    let mut total = Interval::ZERO;
    let mut status = Status::Ok;
    let mut branches = Vec::new();
    for choice in m.discrete_choices() {
        let (sub, weight) = m.substitute_discrete(&choice);
        let mut br = match sub.classify() {
            ModelType::HA => compute_ha(&sub, opts)?,
            ModelType::PHA | ModelType::NPHA => compute_reach(&sub, eps, opts)?,
        };
        br.choice = m
            .discrete_randoms
            .iter()
            .zip(&choice)
            .map(|(d, &i)| (d.name.clone(), d.outcomes[i].value))
            .collect();
        br.weight = weight;
        total = total + weight * br.enclosure.reported;
        status = status.worst(br.status);
        branches.push(br);
    }
    let reported = total.clamp_to(&Interval::UNIT);
    Ok(ReachReport {
        version: REPORT_VERSION,
        model_type: m.model_type,
        epsilon: eps,
        options: *opts,
        reported,
        status,
        branches,
        wall_time_s: Some(start.elapsed().as_secs_f64()),
    })
}
