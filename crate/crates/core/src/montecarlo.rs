//! Monte Carlo estimates for cross-checking verified enclosures.
//!
//! Nothing here is validated: trajectories are simulated with a fixed-step
//! point integrator and guard crossings located by bisection. Samples are
//! drawn in fixed-size chunks, chunk `i` from a ChaCha8 stream `i` under
//! the user seed, and only integer success counts are combined, so results
//! are identical for any number of worker threads.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decide::Steps;
use crate::flowenc::{CompiledFlow, CompiledMode, CompiledModel, FlowError, OdeConfig, Rk4Scratch};
use crate::logic::CompiledPred;
use crate::integrate::{support_bounds, Integrand, IntegrateError};
use crate::interval::Interval;
use crate::model::{DensityForm, Model, RandomParam};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("simulation diverged in mode {mode} at t = {t}")]
    SimulationDiverged { mode: u32, t: f64 },
    #[error("invalid distribution for `{0}`")]
    Distribution(String),
}

/// Samples needed for a `zeta`-accurate estimate with confidence `c`:
/// `ceil(ln(1/(1-c)) / (2 zeta^2))`. The two-sided Hoeffding bound uses
/// `ln(2/(1-c))` instead.
pub fn sample_size(zeta: f64, c: f64, two_sided: bool) -> u64 {
    assert!(zeta > 0.0 && zeta < 1.0 && c > 0.0 && c < 1.0);
    let num = if two_sided { 2.0 } else { 1.0 };
    ((num / (1.0 - c)).ln() / (2.0 * zeta * zeta)).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOptions {
    pub k: usize,
    pub steps: Steps,
    pub seed: u64,
    /// Integration steps per unit of the time bound.
    pub steps_per_mode: usize,
    pub two_sided: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            k: 0,
            steps: Steps::Exact,
            seed: 0,
            steps_per_mode: 400,
            two_sided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub z: Vec<f64>,
    pub estimate: f64,
    pub ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub estimate: f64,
    pub ci: Interval,
    pub n: u64,
    pub successes: u64,
    pub zeta: f64,
    pub conf: f64,
    /// Per-point results of a nondeterministic grid; `ci` is then their
    /// hull, which is not itself a confidence interval.
    pub grid: Vec<GridPoint>,
}

impl McResult {
    pub fn write_grid_csv(&self, names: &[String], mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{},estimate,ci_lo,ci_hi", names.join(","))?;
        for g in &self.grid {
            let z: Vec<String> = g.z.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{},{:?},{:?},{:?}", z.join(","), g.estimate, g.ci.lo(), g.ci.hi())?;
        }
        Ok(())
    }
}

/// Scratch space reused across simulations.
#[derive(Debug, Default)]
pub struct SimBuffers {
    vars: Vec<f64>,
    slots: Vec<f64>,
    d: Vec<f64>,
    rk: Rk4Scratch,
    x1: Vec<f64>,
    xm: Vec<f64>,
}

impl SimBuffers {
    fn load(&mut self, x: &[f64], params: &[f64]) {
        self.vars.clear();
        self.vars.extend_from_slice(x);
        self.vars.extend_from_slice(params);
    }

    fn holds(&mut self, p: &CompiledPred) -> bool {
        p.holds_f64_with(&self.vars, &mut self.slots, &mut self.d)
    }

    fn first_guard(&mut self, mode: &CompiledMode) -> Option<usize> {
        mode.jumps
            .iter()
            .position(|j| j.guard.holds_f64_with(&self.vars, &mut self.slots, &mut self.d))
    }

    /// State at local time `t1` from `x` at `t0` (`entry` at time 0).
    fn advance(&mut self, flow: &CompiledFlow, entry: &[f64], x: &[f64], t0: f64, t1: f64, params: &[f64], out: &mut Vec<f64>) {
        match flow {
            CompiledFlow::Explicit(tape) => {
                self.load(entry, params);
                self.vars.push(t1);
                tape.eval_f64_into(&self.vars, &mut self.slots, out);
            }
            CompiledFlow::Ode(sys) => sys.rk4_into(x, t0, params, t1 - t0, &mut self.rk, out),
        }
    }
}

/// Point simulation of one trajectory; true when the goal is reached.
pub fn simulate(cm: &CompiledModel, params: &[f64], opts: &McOptions) -> Result<bool, McError> {
    simulate_with(cm, params, opts, &mut SimBuffers::default())
}

pub fn simulate_with(cm: &CompiledModel, params: &[f64], opts: &McOptions, b: &mut SimBuffers) -> Result<bool, McError> {
    let counts = |depth: usize| match opts.steps {
        Steps::Exact => depth == opts.k,
        Steps::Within => depth <= opts.k,
    };
    let mut mode_id = cm.init_mode;
    let mut x = cm.init.eval_f64(params);
    let dt = cm.time_bound / opts.steps_per_mode.max(1) as f64;
    let domain_ok = |x: &[f64]| x.iter().zip(&cm.domain).all(|(v, d)| d.contains(*v));
    let mut x1 = std::mem::take(&mut b.x1);
    let mut xm = std::mem::take(&mut b.xm);
    let mut result = Ok(false);
    'depths: for depth in 0..=opts.k {
        let mode = cm.mode(mode_id)?;
        let goal_here = mode_id == cm.goal_mode && counts(depth);
        let entry = x.clone();
        let mut t = 0.0;
        let jumped = loop {
            b.load(&x, params);
            if !b.holds(&mode.invariant) || !domain_ok(&x) {
                break 'depths;
            }
            if goal_here && b.holds(&cm.goal) {
                result = Ok(true);
                break 'depths;
            }
            if let Some(i) = b.first_guard(mode) {
                break Some(i);
            }
            if t >= cm.time_bound {
                break None;
            }
            let t1 = (t + dt).min(cm.time_bound);
            b.advance(&mode.flow, &entry, &x, t, t1, params, &mut x1);
            if !x1.iter().all(|v| v.is_finite()) {
                result = Err(McError::SimulationDiverged { mode: mode_id, t: t1 });
                break 'depths;
            }
            b.load(&x1, params);
            if b.first_guard(mode).is_some() {
                // bisect for the first time a guard holds
                let (mut lo, mut hi) = (t, t1);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    b.advance(&mode.flow, &entry, &x, t, mid, params, &mut xm);
                    b.load(&xm, params);
                    if b.first_guard(mode).is_some() {
                        hi = mid;
                        std::mem::swap(&mut x1, &mut xm);
                    } else {
                        lo = mid;
                    }
                }
                t = hi;
            } else {
                t = t1;
            }
            std::mem::swap(&mut x, &mut x1);
        };
        let Some(i) = jumped else {
            break;
        };
        if depth == opts.k {
            break;
        }
        let jump = &mode.jumps[i];
        b.load(&x, params);
        x = jump.reset.eval_f64(&b.vars);
        mode_id = jump.target;
    }
    b.x1 = x1;
    b.xm = xm;
    result
}

enum Sampler {
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
    /// Piecewise-linear inverse CDF: `(x, F(x))` knots.
    Table(Vec<(f64, f64)>),
}

impl Sampler {
    fn new(p: &RandomParam) -> Result<Sampler, McError> {
        match p.form {
            DensityForm::Normal { mean, variance } => Normal::new(mean, variance.sqrt())
                .map(Sampler::Normal)
                .map_err(|_| McError::Distribution(p.name.clone())),
            DensityForm::Uniform { a, b } if a < b => Ok(Sampler::Uniform(Uniform::new_inclusive(a, b))),
            DensityForm::Uniform { .. } => Err(McError::Distribution(p.name.clone())),
            DensityForm::Custom => {
                let f = Integrand::for_param(p)?;
                let support = support_bounds(p, 1e-9)?;
                let n = 1 << 12;
                let w = support.width() / n as f64;
                let mut knots = vec![(support.lo(), 0.0)];
                let mut acc = 0.0;
                for i in 0..n {
                    let a = support.lo() + w * i as f64;
                    let b = if i == n - 1 { support.hi() } else { a + w };
                    acc += f.cell_enclosure(Interval::new(a, b))?.midpoint().max(0.0);
                    knots.push((b, acc));
                }
                if acc <= 0.0 {
                    return Err(McError::Distribution(p.name.clone()));
                }
                for k in &mut knots {
                    k.1 /= acc;
                }
                Ok(Sampler::Table(knots))
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Table(knots) => {
                let u: f64 = rng.gen();
                let i = knots.partition_point(|k| k.1 < u).clamp(1, knots.len() - 1);
                let ((x0, f0), (x1, f1)) = (knots[i - 1], knots[i]);
                if f1 > f0 {
                    x0 + (x1 - x0) * (u - f0) / (f1 - f0)
                } else {
                    x0
                }
            }
        }
    }
}

struct Prepared {
    samplers: Vec<Sampler>,
    /// Compiled reduced model and cumulative weight per discrete outcome.
    branches: Vec<(CompiledModel, f64)>,
}

fn prepare(m: &Model) -> Result<Prepared, McError> {
    let samplers = m.continuous_randoms.iter().map(Sampler::new).collect::<Result<Vec<_>, _>>()?;
    let mut branches = Vec::new();
    let mut acc = 0.0;
    for choice in m.discrete_choices() {
        let (sub, w) = m.substitute_discrete(&choice);
        acc += w.midpoint();
        branches.push((CompiledModel::new(&sub, OdeConfig::default())?, acc));
    }
    Ok(Prepared { samplers, branches })
}

fn count_successes(p: &Prepared, nondet: &[f64], n: u64, opts: &McOptions) -> Result<u64, McError> {
    let chunks = n.div_ceil(CHUNK as u64);
    let counts: Vec<Result<u64, McError>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(ci);
            let len = (n - ci * CHUNK as u64).min(CHUNK as u64);
            let total = p.branches.last().map_or(1.0, |b| b.1);
            let mut hits = 0;
            let mut buffers = SimBuffers::default();
            let mut params = Vec::with_capacity(p.samplers.len() + nondet.len());
            for _ in 0..len {
                params.clear();
                params.extend(p.samplers.iter().map(|s| s.sample(&mut rng)));
                params.extend_from_slice(nondet);
                let u: f64 = rng.gen::<f64>() * total;
                let b = p.branches.iter().position(|b| u < b.1).unwrap_or(p.branches.len() - 1);
                if simulate_with(&p.branches[b].0, &params, opts, &mut buffers)? {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect();
    counts.into_iter().sum()
}

fn result(successes: u64, n: u64, zeta: f64, conf: f64) -> McResult {
    let estimate = successes as f64 / n as f64;
    McResult {
        estimate,
        ci: Interval::new((estimate - zeta).max(0.0), (estimate + zeta).min(1.0)),
        n,
        successes,
        zeta,
        conf,
        grid: vec![],
    }
}

/// Estimate with nondeterministic parameters fixed at `nondet` (their
/// midpoints when `None`).
pub fn mc_estimate(
    m: &Model,
    zeta: f64,
    conf: f64,
    nondet: Option<&[f64]>,
    opts: &McOptions,
) -> Result<McResult, McError> {
    let n = sample_size(zeta, conf, opts.two_sided);
    let p = prepare(m)?;
    let mid: Vec<f64> = m.nondet_params.iter().map(|(_, x)| x.midpoint()).collect();
    let z = nondet.unwrap_or(&mid);
    Ok(result(count_successes(&p, z, n, opts)?, n, zeta, conf))
}

/// Estimates on a uniform grid over the nondeterministic domain; `grid[i]`
/// points along dimension `i` (a single point is the midpoint).
pub fn npha_envelope(m: &Model, grid: &[usize], zeta: f64, conf: f64, opts: &McOptions) -> Result<McResult, McError> {
    assert_eq!(grid.len(), m.nondet_params.len());
    let axes: Vec<Vec<f64>> = m
        .nondet_params
        .iter()
        .zip(grid)
        .map(|((_, x), &g)| match g {
            0 | 1 => vec![x.midpoint()],
            g => (0..g)
                .map(|i| {
                    if i == g - 1 {
                        x.hi()
                    } else {
                        x.lo() + x.width() * i as f64 / (g - 1) as f64
                    }
                })
                .collect(),
        })
        .collect();
    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    let n = sample_size(zeta, conf, opts.two_sided);
    let p = prepare(m)?;
    let mut out = McResult {
        estimate: 0.0,
        ci: Interval::ZERO,
        n,
        successes: 0,
        zeta,
        conf,
        grid: Vec::with_capacity(points.len()),
    };
    let mut hull: Option<Interval> = None;
    for z in points {
        let r = result(count_successes(&p, &z, n, opts)?, n, zeta, conf);
        hull = Some(hull.map_or(r.ci, |h| h.hull(&r.ci)));
        out.successes += r.successes;
        out.grid.push(GridPoint {
            z,
            estimate: r.estimate,
            ci: r.ci,
        });
    }
    out.estimate = out.grid.iter().map(|g| g.estimate).sum::<f64>() / out.grid.len() as f64;
    out.ci = hull.unwrap_or(Interval::UNIT);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use statrs::function::erf::erf;

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn chernoff_sizes() {
        assert_eq!(sample_size(5e-3, 0.99, false), 92_104);
        assert_eq!(sample_size(1e-2, 0.99, false), 23_026);
        // quartering zeta multiplies the exact bound by 4
        let exact = (100.0f64).ln() / (2.0 * 2.5e-3 * 2.5e-3);
        assert_eq!(sample_size(2.5e-3, 0.99, false), exact.ceil() as u64);
        assert_eq!(sample_size(2.5e-3, 0.99, false), 368_414);
        assert!(sample_size(5e-3, 0.99, true) > 92_104);
    }

    fn threshold(decl: &str, goal: &str) -> Model {
        parse_model(&format!(
            "[0,1]time;\n[-100,100]x;\n{decl}\n{{ mode1; flow: d/dt[x]=0; }}\ninit: @1(x = r);\ngoal: @1({goal});\n"
        ))
        .unwrap()
    }

    #[test]
    fn point_simulations() {
        let m = threshold("[-5,5]r;", "x >= 1");
        let cm = CompiledModel::new(&m, OdeConfig::default()).unwrap();
        let o = McOptions::default();
        assert!(simulate(&cm, &[2.0], &o).unwrap());
        assert!(!simulate(&cm, &[0.0], &o).unwrap());
        let p = parse_model(
            "[0,10]time;\n[-1000,1000]Sx;\n[-1000,1000]Sy;\n[-1000,1000]vy;\n[10,40]v0;\n\
             { mode1; flow: d/dt[Sx]=v0*cos(0.7854); d/dt[Sy]=vy; d/dt[vy]=-9.8;\n\
               jump: (and (Sy <= 0) (vy < 0))==>@2(vy'=-0.9*vy); }\n\
             { mode2; flow: d/dt[Sx]=0; d/dt[Sy]=0; d/dt[vy]=0; }\n\
             init: @1(and (Sx = 0) (Sy = 0) (vy = v0*sin(0.7854)));\ngoal: @2(Sx >= 100);\n",
        )
        .unwrap();
        let cm = CompiledModel::new(&p, OdeConfig::default()).unwrap();
        let v_star = (100.0 * 9.8 / (2.0 * 0.7854f64).sin()).sqrt();
        let o1 = McOptions { k: 1, ..o };
        assert!(simulate(&cm, &[v_star + 0.1], &o1).unwrap());
        assert!(!simulate(&cm, &[v_star - 0.1], &o1).unwrap());
        assert!(!simulate(&cm, &[v_star + 0.1], &o).unwrap());
    }

    #[test]
    fn estimates() {
        let always = threshold("[-5,5]q;\nN(0,1)r;", "x >= -1e6");
        let r = mc_estimate(&always, 5e-2, 0.99, None, &McOptions::default()).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert!(r.ci.contains(1.0));
        let half = threshold("N(0,1)r;", "x >= 0");
        let r = mc_estimate(&half, 1e-2, 0.99, None, &McOptions::default()).unwrap();
        assert!(r.ci.contains(0.5), "{:?}", r.ci);
        let again = mc_estimate(&half, 1e-2, 0.99, None, &McOptions::default()).unwrap();
        assert_eq!(r, again);
        let u = threshold("U(0,4)r;", "x >= 3");
        let r = mc_estimate(&u, 1e-2, 0.99, None, &McOptions::default()).unwrap();
        assert!(r.ci.contains(0.25), "{:?}", r.ci);
    }

    #[test]
    fn custom_density_sampling() {
        let m = threshold("PDF(2*r, 0, 1)r;", "x >= 0.5");
        let r = mc_estimate(&m, 1e-2, 0.99, None, &McOptions::default()).unwrap();
        assert!(r.ci.contains(0.75), "{:?}", r.ci);
    }

    #[test]
    fn envelopes() {
        let m = threshold("N(0,1)r;\n[0,1]z;", "x >= z");
        let r = npha_envelope(&m, &[11], 1e-2, 0.99, &McOptions::default()).unwrap();
        assert_eq!(r.grid.len(), 11);
        assert!(r.ci.lo() <= 1.0 - phi(1.0) && r.ci.hi() >= 0.5, "{:?}", r.ci);
        let one = npha_envelope(&m, &[1], 1e-2, 0.99, &McOptions::default()).unwrap();
        let mid = mc_estimate(&m, 1e-2, 0.99, None, &McOptions::default()).unwrap();
        assert_eq!(one.ci, mid.ci);
        let flat = threshold("N(0,1)r;\n[0,1]z;", "x >= 0");
        let r = npha_envelope(&flat, &[5], 1e-2, 0.99, &McOptions::default()).unwrap();
        assert!(r.ci.width() <= 2e-2 + 1e-12);
        let mut csv = Vec::new();
        r.write_grid_csv(&["z".to_string()], &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
    }
}
