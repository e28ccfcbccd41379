//! Validated enclosures of continuous evolution within a mode.
//!
//! Explicit flows are enclosed by interval evaluation of the solution
//! expressions. ODE flows use a fixed-order interval Taylor method: the
//! state is augmented with local time and the (constant) parameters, each
//! step first certifies an a-priori box by Picard iteration and then
//! encloses the solution with the Taylor polynomial plus a Lagrange
//! remainder over that box. Naive and mean-value evaluations of the
//! polynomial are intersected.

use thiserror::Error;

use crate::expr::{self, Expr, ExprError, Tape, DEFAULT_NODE_CAP};
use crate::interval::{sub_down, sub_up, Interval};
use crate::logic::{CompiledPred, Truth};
use crate::model::{Flow, Mode, Model};

/// Name of local time inside flows.
pub const TIME: &str = "t";
const STEP_VAR: &str = "h#";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("no a-priori enclosure for a step of {h} at t = {t}")]
    NoApriori { t: f64, h: f64 },
    #[error("step size fell below {min} at t = {t}")]
    StepUnderflow { t: f64, min: f64 },
    #[error("state enclosure diverged at t = {t}")]
    Diverged { t: f64 },
    #[error("unknown mode {0}")]
    UnknownMode(u32),
}

/// Settings of the validated ODE integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub order: usize,
    /// Largest step as a fraction of the horizon.
    pub max_step_frac: f64,
    /// Smallest step as a fraction of the horizon.
    pub min_step_frac: f64,
    pub picard_rounds: usize,
    pub inflation: f64,
    pub node_cap: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            order: 3,
            max_step_frac: 1.0 / 32.0,
            min_step_frac: 1e-9,
            picard_rounds: 20,
            inflation: 1.5,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

/// Variable order shared by all compiled expressions of a model:
/// state variables first, then parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub state: Vec<String>,
    pub params: Vec<String>,
}

impl Layout {
    pub fn of(m: &Model) -> Layout {
        Layout {
            state: m.state_names(),
            params: m.param_names(),
        }
    }

    pub fn vars(&self) -> Vec<String> {
        self.state.iter().chain(&self.params).cloned().collect()
    }

    fn ode_vars(&self) -> Vec<String> {
        let mut v = self.state.clone();
        v.push(TIME.to_string());
        v.extend(self.params.iter().cloned());
        v
    }
}

#[derive(Debug, Clone)]
pub struct OdeSystem {
    n: usize,
    order: usize,
    field: Tape,
    taylor: Tape,
    remainder: Tape,
    jacobian: Option<Tape>,
}

#[derive(Debug, Clone)]
pub enum CompiledFlow {
    /// Solution over `[entry state, params, t]`.
    Explicit(Tape),
    Ode(Box<OdeSystem>),
}

#[derive(Debug, Clone)]
pub struct CompiledJump {
    pub guard: CompiledPred,
    pub target: u32,
    /// New state over `[state, params]`.
    pub reset: Tape,
}

#[derive(Debug, Clone)]
pub struct CompiledMode {
    pub id: u32,
    pub flow: CompiledFlow,
    pub invariant: CompiledPred,
    pub jumps: Vec<CompiledJump>,
}

/// A model compiled for repeated box evaluation. Discrete parameters must
/// already be substituted.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub layout: Layout,
    pub modes: Vec<CompiledMode>,
    pub init_mode: u32,
    /// Initial state over the parameters.
    pub init: Tape,
    pub goal_mode: u32,
    pub goal: CompiledPred,
    pub goal_c_mode: u32,
    pub goal_c: CompiledPred,
    pub domain: Vec<Interval>,
    pub time_bound: f64,
    pub ode: OdeConfig,
}

impl CompiledModel {
    pub fn new(m: &Model, ode: OdeConfig) -> Result<CompiledModel, FlowError> {
        let layout = Layout::of(m);
        let vars = layout.vars();
        let modes = m
            .modes
            .iter()
            .map(|mode| compile_mode(mode, &layout, &ode))
            .collect::<Result<Vec<_>, _>>()?;
        let state_exprs: Vec<Expr> = layout
            .state
            .iter()
            .map(|s| {
                m.init
                    .assignments
                    .iter()
                    .find(|(n, _)| n == s)
                    .map(|(_, e)| e.clone())
                    .expect("init covers every state variable")
            })
            .collect();
        let init = Tape::compile_many(&state_exprs, &layout.params)?;
        let goal = CompiledPred::compile(&m.goal.pred, &vars)?;
        let (goal_c_mode, goal_c_pred) = match &m.goal_c {
            Some(gc) => (gc.mode, gc.pred.clone()),
            None => (m.goal.mode, crate::model::Pred::Not(Box::new(m.goal.pred.clone()))),
        };
        Ok(CompiledModel {
            modes,
            init_mode: m.init.mode,
            init,
            goal_mode: m.goal.mode,
            goal,
            goal_c_mode,
            goal_c: CompiledPred::compile(&goal_c_pred, &vars)?,
            domain: m.state_vars.iter().map(|(_, x)| *x).collect(),
            time_bound: m.time_bound,
            ode,
            layout,
        })
    }

    pub fn mode(&self, id: u32) -> Result<&CompiledMode, FlowError> {
        self.modes
            .iter()
            .find(|m| m.id == id)
            .ok_or(FlowError::UnknownMode(id))
    }

    /// Truth of "state lies in the declared domain".
    pub fn in_domain(&self, state: &[Interval]) -> Truth {
        let mut t = Truth::True;
        for (x, d) in state.iter().zip(&self.domain) {
            if !x.overlaps(d) {
                return Truth::False;
            }
            if !x.subset_of(d) {
                t = Truth::Unknown;
            }
        }
        t
    }

    pub fn initial_state(&self, params: &[Interval]) -> Result<Vec<Interval>, FlowError> {
        Ok(self.init.eval(params).map_err(ExprError::from)?)
    }
}

fn compile_mode(mode: &Mode, layout: &Layout, cfg: &OdeConfig) -> Result<CompiledMode, FlowError> {
    let vars = layout.vars();
    let ordered = |eqs: &[(String, Expr)]| -> Vec<Expr> {
        layout
            .state
            .iter()
            .map(|s| {
                eqs.iter()
                    .find(|(n, _)| n == s)
                    .map(|(_, e)| e.clone())
                    .expect("flows cover every state variable")
            })
            .collect()
    };
    let flow = match &mode.flow {
        Flow::Explicit(eqs) => {
            let mut v = vars.clone();
            v.push(TIME.to_string());
            CompiledFlow::Explicit(Tape::compile_many(&ordered(eqs), &v)?)
        }
        Flow::Ode(eqs) => CompiledFlow::Ode(Box::new(OdeSystem::new(&ordered(eqs), layout, cfg)?)),
    };
    let jumps = mode
        .jumps
        .iter()
        .map(|j| {
            let reset: Vec<Expr> = layout
                .state
                .iter()
                .map(|s| {
                    j.resets
                        .iter()
                        .find(|(n, _)| n == s)
                        .map(|(_, e)| e.clone())
                        .unwrap_or_else(|| Expr::var(s))
                })
                .collect();
            Ok(CompiledJump {
                guard: CompiledPred::compile(&j.guard, &vars)?,
                target: j.target,
                reset: Tape::compile_many(&reset, &vars)?,
            })
        })
        .collect::<Result<Vec<_>, FlowError>>()?;
    Ok(CompiledMode {
        id: mode.id,
        flow,
        invariant: CompiledPred::conjunction(&mode.invariant, &vars)?,
        jumps,
    })
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl OdeSystem {
    fn new(field: &[Expr], layout: &Layout, cfg: &OdeConfig) -> Result<OdeSystem, FlowError> {
        let n = field.len();
        let zvars = layout.ode_vars();
        let field: Vec<Expr> = field.iter().map(|e| e.simplify()).collect();
        let lie = |g: &Expr| -> Result<Expr, ExprError> {
            let mut acc = g.differentiate(TIME)?;
            for (x, fx) in layout.state.iter().zip(&field) {
                let d = g.differentiate(x)?;
                if d.as_const() != Some(0.0) {
                    acc = expr::add(acc, expr::mul(d, fx.clone()));
                }
            }
            if acc.size() > cfg.node_cap {
                return Err(ExprError::NodeCap(cfg.node_cap));
            }
            Ok(acc)
        };
        // derivs[k][i] = d^k x_i / dt^k along the flow
        let mut derivs: Vec<Vec<Expr>> = vec![layout.state.iter().map(|s| Expr::var(s)).collect()];
        for k in 1..=cfg.order + 1 {
            let next = if k == 1 {
                field.clone()
            } else {
                derivs[k - 1].iter().map(&lie).collect::<Result<Vec<_>, _>>()?
            };
            derivs.push(next);
        }
        let coeff = |k: usize, i: usize| expr::div(derivs[k][i].clone(), Expr::Const(factorial(k)));
        let h = Expr::var(STEP_VAR);
        let taylor: Vec<Expr> = (0..n)
            .map(|i| {
                (1..=cfg.order).fold(derivs[0][i].clone(), |acc, k| {
                    expr::add(acc, expr::mul(coeff(k, i), expr::pow(h.clone(), k as i32)))
                })
            })
            .collect();
        let remainder: Vec<Expr> = (0..n).map(|i| coeff(cfg.order + 1, i)).collect();
        let mut hvars = zvars.clone();
        hvars.push(STEP_VAR.to_string());
        let jacobian = {
            let mut entries = Vec::with_capacity(n * zvars.len());
            let mut ok = true;
            'outer: for t in &taylor {
                for z in &zvars {
                    match t.differentiate(z) {
                        Ok(d) if d.size() <= cfg.node_cap => entries.push(d),
                        _ => {
                            ok = false;
                            break 'outer;
                        }
                    }
                }
            }
            if ok {
                Some(Tape::compile_many(&entries, &hvars)?)
            } else {
                None
            }
        };
        Ok(OdeSystem {
            n,
            order: cfg.order,
            field: Tape::compile_many(&field, &zvars)?,
            taylor: Tape::compile_many(&taylor, &hvars)?,
            remainder: Tape::compile_many(&remainder, &zvars)?,
            jacobian,
        })
    }

    /// Vector field at a point `[x, t, params]`.
    pub fn field_f64(&self, z: &[f64]) -> Vec<f64> {
        self.field.eval_f64(z)
    }

    /// Box `B` of state values with `x0 + [0,h] f(B) ⊆ B`, which then
    /// contains every solution from `z0` over local times `t0 + [0,h]`.
    fn apriori(&self, z0: &[Interval], hbox: Interval, cfg: &OdeConfig) -> Option<Vec<Interval>> {
        let n = self.n;
        let mut z = z0.to_vec();
        z[n] = z0[n] + hbox;
        let f0 = self.field.eval(&z).ok()?;
        let mut a: Vec<Interval> = (0..n).map(|i| z0[i] + hbox * f0[i]).collect();
        for _ in 0..cfg.picard_rounds {
            z[..n].copy_from_slice(&a);
            let fa = self.field.eval(&z).ok()?;
            let b: Vec<Interval> = (0..n).map(|i| z0[i] + hbox * fa[i]).collect();
            if b.iter().zip(&a).all(|(bi, ai)| bi.subset_of(ai)) {
                return Some(b);
            }
            a = a
                .iter()
                .zip(&b)
                .map(|(ai, bi)| {
                    let u = ai.hull(bi);
                    let c = u.midpoint();
                    let r = (u.hi() - c).max(c - u.lo()) * cfg.inflation + 1e-15 * (1.0 + c.abs());
                    Interval::new(c - r, c + r)
                })
                .collect();
            if !a.iter().all(Interval::is_finite) {
                return None;
            }
        }
        None
    }

    /// Encloses the state at local offsets `s ⊆ [0, h]` from a step start.
    fn enclose(&self, step: &Step, s: Interval) -> Vec<Interval> {
        let n = self.n;
        let mut with_h = step.z0.clone();
        with_h.push(s);
        let mut full_a = step.z0.clone();
        full_a[..n].copy_from_slice(&step.apriori);
        full_a[n] = step.z0[n] + Interval::new(0.0, step.hmax);
        let rem = match self.remainder.eval(&full_a) {
            Ok(r) => r,
            Err(_) => return step.apriori.clone(),
        };
        let sp = match s.powi(self.order as i32 + 1) {
            Ok(v) => v,
            Err(_) => return step.apriori.clone(),
        };
        let naive = self.taylor.eval(&with_h);
        let mv = self.jacobian.as_ref().and_then(|jac| {
            let mut mid: Vec<Interval> = step.mid.iter().map(|&m| Interval::point(m)).collect();
            mid.push(s);
            let tm = self.taylor.eval(&mid).ok()?;
            let j = jac.eval(&with_h).ok()?;
            let d = step.z0.len();
            Some(
                (0..n)
                    .map(|i| {
                        (0..d).fold(tm[i], |acc, k| {
                            acc + j[i * d + k] * (step.z0[k] - Interval::point(step.mid[k]))
                        })
                    })
                    .collect::<Vec<_>>(),
            )
        });
        (0..n)
            .map(|i| {
                let r = rem[i] * sp;
                let mut x = step.apriori[i];
                if let Ok(t) = &naive {
                    x = x.intersect(&(t[i] + r)).unwrap_or(x);
                }
                if let Some(m) = &mv {
                    x = x.intersect(&(m[i] + r)).unwrap_or(x);
                }
                x
            })
            .collect()
    }

    /// One classical Runge-Kutta step for point simulation.
    pub fn rk4(&self, x: &[f64], t: f64, params: &[f64], dt: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.rk4_into(x, t, params, dt, &mut Rk4Scratch::default(), &mut out);
        out
    }

    pub fn rk4_into(&self, x: &[f64], t: f64, params: &[f64], dt: f64, s: &mut Rk4Scratch, out: &mut Vec<f64>) {
        let Rk4Scratch { z, slots, xs, k } = s;
        let [k1, k2, k3, k4] = k;
        let mut stage = |xs: &[f64], ts: f64, dst: &mut Vec<f64>| {
            z.clear();
            z.extend_from_slice(xs);
            z.push(ts);
            z.extend_from_slice(params);
            self.field.eval_f64_into(z, slots, dst);
        };
        stage(x, t, k1);
        xs.clear();
        xs.extend(x.iter().zip(k1.iter()).map(|(a, b)| a + dt / 2.0 * b));
        stage(xs, t + dt / 2.0, k2);
        xs.clear();
        xs.extend(x.iter().zip(k2.iter()).map(|(a, b)| a + dt / 2.0 * b));
        stage(xs, t + dt / 2.0, k3);
        xs.clear();
        xs.extend(x.iter().zip(k3.iter()).map(|(a, b)| a + dt * b));
        stage(xs, t + dt, k4);
        out.clear();
        out.extend((0..self.n).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])));
    }
}

/// Reusable buffers for [`OdeSystem::rk4_into`].
#[derive(Debug, Default)]
pub struct Rk4Scratch {
    z: Vec<f64>,
    slots: Vec<f64>,
    xs: Vec<f64>,
    k: [Vec<f64>; 4],
}

#[derive(Debug, Clone)]
struct Step {
    t0: f64,
    t1: f64,
    /// Upper bound of `t1 - t0`.
    hmax: f64,
    /// Augmented state `[x, t, params]` at `t0`.
    z0: Vec<Interval>,
    mid: Vec<f64>,
    apriori: Vec<Interval>,
}

/// Enclosure of all trajectories from a box of entry states and
/// parameters over local time `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct Trajectory<'a> {
    flow: &'a CompiledFlow,
    params: Vec<Interval>,
    entry: Vec<Interval>,
    horizon: f64,
    steps: Vec<Step>,
    failure: Option<FlowError>,
}

impl<'a> Trajectory<'a> {
    pub fn new(
        mode: &'a CompiledMode,
        params: &[Interval],
        entry: &[Interval],
        horizon: f64,
        cfg: &OdeConfig,
    ) -> Trajectory<'a> {
        let mut tr = Trajectory {
            flow: &mode.flow,
            params: params.to_vec(),
            entry: entry.to_vec(),
            horizon,
            steps: Vec::new(),
            failure: None,
        };
        if let CompiledFlow::Ode(sys) = &mode.flow {
            tr.integrate(sys, cfg);
        }
        tr
    }

    fn integrate(&mut self, sys: &OdeSystem, cfg: &OdeConfig) {
        let n = sys.n;
        let max_step = self.horizon * cfg.max_step_frac;
        let min_step = self.horizon * cfg.min_step_frac;
        let mut z: Vec<Interval> = self.entry.clone();
        z.push(Interval::ZERO);
        z.extend_from_slice(&self.params);
        let mut t = 0.0;
        let mut h = max_step;
        while t < self.horizon {
            let (t1, hbox, a) = loop {
                let t1 = if t + h >= self.horizon { self.horizon } else { t + h };
                let hbox = Interval::new(0.0, sub_up(t1, t));
                if let Some(a) = sys.apriori(&z, hbox, cfg) {
                    break (t1, hbox, a);
                }
                h /= 2.0;
                if h < min_step {
                    self.failure = Some(FlowError::StepUnderflow { t, min: min_step });
                    return;
                }
            };
            let step = Step {
                t0: t,
                t1,
                hmax: hbox.hi(),
                mid: z.iter().map(Interval::midpoint).collect(),
                z0: z.clone(),
                apriori: a,
            };
            let s = Interval::new(sub_down(t1, t).max(0.0), hbox.hi());
            let next = sys.enclose(&step, s);
            if !next.iter().all(Interval::is_finite) {
                self.failure = Some(FlowError::Diverged { t: t1 });
                return;
            }
            z[..n].copy_from_slice(&next);
            z[n] = z[n] + s;
            self.steps.push(step);
            t = t1;
            h = (h * 2.0).min(max_step);
        }
    }

    /// Local time up to which enclosures are available.
    pub fn covered(&self) -> f64 {
        match (self.flow, &self.failure) {
            (CompiledFlow::Explicit(_), _) | (_, None) => self.horizon,
            (CompiledFlow::Ode(_), Some(_)) => self.steps.last().map(|s| s.t1).unwrap_or(0.0),
        }
    }

    pub fn failure(&self) -> Option<&FlowError> {
        self.failure.as_ref()
    }

    /// Time cells to start predicate checks from: the integrator steps for
    /// ODEs, a uniform grid of `grid` cells for explicit flows.
    pub fn initial_cells(&self, grid: usize) -> Vec<Interval> {
        match self.flow {
            CompiledFlow::Ode(_) => self
                .steps
                .iter()
                .map(|s| Interval::new(s.t0, s.t1))
                .collect(),
            CompiledFlow::Explicit(_) => {
                let grid = grid.max(1);
                let pts: Vec<f64> = (0..=grid)
                    .map(|i| {
                        if i == grid {
                            self.horizon
                        } else {
                            self.horizon * i as f64 / grid as f64
                        }
                    })
                    .collect();
                pts.windows(2).map(|w| Interval::new(w[0], w[1])).collect()
            }
        }
    }

    /// State enclosure over the local-time cell `tcell ⊆ [0, covered]`.
    pub fn enclose(&self, tcell: Interval) -> Result<Vec<Interval>, FlowError> {
        match self.flow {
            CompiledFlow::Explicit(tape) => {
                let mut v = self.entry.clone();
                v.extend_from_slice(&self.params);
                v.push(tcell);
                Ok(tape.eval(&v).map_err(ExprError::from)?)
            }
            CompiledFlow::Ode(sys) => {
                if tcell.hi() > self.covered() {
                    return Err(self
                        .failure
                        .clone()
                        .unwrap_or(FlowError::Diverged { t: tcell.hi() }));
                }
                let first = self.steps.partition_point(|s| s.t1 < tcell.lo());
                let mut out: Option<Vec<Interval>> = None;
                for step in &self.steps[first..] {
                    if step.t0 > tcell.hi() {
                        break;
                    }
                    let lo = sub_down(tcell.lo().max(step.t0), step.t0).max(0.0);
                    let hi = sub_up(tcell.hi().min(step.t1), step.t0).min(step.hmax).max(lo);
                    let x = sys.enclose(step, Interval::new(lo, hi));
                    out = Some(match out {
                        None => x,
                        Some(acc) => acc.iter().zip(&x).map(|(a, b)| a.hull(b)).collect(),
                    });
                }
                out.ok_or(FlowError::Diverged { t: tcell.lo() })
            }
        }
    }

    /// A-priori boxes of the steps overlapping `tcell` (the state enclosure
    /// itself for explicit flows).
    pub fn apriori(&self, tcell: Interval) -> Result<Vec<Interval>, FlowError> {
        match self.flow {
            CompiledFlow::Explicit(_) => self.enclose(tcell),
            CompiledFlow::Ode(_) => {
                let mut out: Option<Vec<Interval>> = None;
                for step in self.steps.iter().filter(|s| s.t1 >= tcell.lo() && s.t0 <= tcell.hi()) {
                    out = Some(match out {
                        None => step.apriori.clone(),
                        Some(acc) => acc.iter().zip(&step.apriori).map(|(a, b)| a.hull(b)).collect(),
                    });
                }
                out.ok_or(FlowError::Diverged { t: tcell.lo() })
            }
        }
    }

    /// `[state, params]` for predicate evaluation.
    pub fn predicate_vars(&self, state: &[Interval]) -> Vec<Interval> {
        state.iter().chain(&self.params).copied().collect()
    }
}

/// Result of a state enclosure over a time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEnclosure {
    pub mode: u32,
    pub tcell: Interval,
    pub state: Vec<Interval>,
    pub apriori: Vec<Interval>,
}

/// Interval evaluation of an explicit flow.
pub fn explicit_flow(
    mode: &CompiledMode,
    params: &[Interval],
    init: &[Interval],
    tcell: Interval,
) -> Result<FlowEnclosure, FlowError> {
    let tr = Trajectory::new(mode, params, init, tcell.hi().max(f64::MIN_POSITIVE), &OdeConfig::default());
    let state = tr.enclose(tcell)?;
    Ok(FlowEnclosure {
        mode: mode.id,
        tcell,
        apriori: state.clone(),
        state,
    })
}

/// Picard a-priori box for one step of length `h` from `init`.
pub fn picard_apriori(
    mode: &CompiledMode,
    params: &[Interval],
    init: &[Interval],
    h: f64,
    cfg: &OdeConfig,
) -> Result<Vec<Interval>, FlowError> {
    let CompiledFlow::Ode(sys) = &mode.flow else {
        return Ok(init.to_vec());
    };
    let mut z = init.to_vec();
    z.push(Interval::ZERO);
    z.extend_from_slice(params);
    sys.apriori(&z, Interval::new(0.0, h), cfg)
        .ok_or(FlowError::NoApriori { t: 0.0, h })
}

/// Validated ODE enclosure over `tcell`, integrating from local time 0.
pub fn ode_flow(
    mode: &CompiledMode,
    params: &[Interval],
    init: &[Interval],
    tcell: Interval,
    cfg: &OdeConfig,
) -> Result<FlowEnclosure, FlowError> {
    let horizon = tcell.hi();
    if horizon == 0.0 {
        return Ok(FlowEnclosure {
            mode: mode.id,
            tcell,
            state: init.to_vec(),
            apriori: init.to_vec(),
        });
    }
    let tr = Trajectory::new(mode, params, init, horizon, cfg);
    Ok(FlowEnclosure {
        mode: mode.id,
        tcell,
        state: tr.enclose(tcell)?,
        apriori: tr.apriori(tcell)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Crossing {
    NoCross,
    Cross { tcell: Interval, state: Vec<Interval> },
    Unknown,
}

/// Locates the first time in `horizon` at which `guard` holds, to within
/// `tol`, by bisecting time cells.
pub fn guard_crossing(
    traj: &Trajectory,
    guard: &CompiledPred,
    horizon: Interval,
    tol: f64,
    delta: f64,
) -> Crossing {
    let truth = |cell: Interval| -> Truth {
        match traj.enclose(cell) {
            Ok(s) => guard.eval(&traj.predicate_vars(&s), delta),
            Err(_) => Truth::Unknown,
        }
    };
    let mut stack: Vec<Interval> = traj
        .initial_cells(64)
        .into_iter()
        .filter_map(|c| c.intersect(&horizon))
        .rev()
        .collect();
    let mut first: Option<Interval> = None;
    while let Some(cell) = stack.pop() {
        if let Some(f) = first {
            if cell.lo() - f.lo() >= tol {
                return Crossing::Unknown;
            }
        }
        let t = truth(cell);
        if t == Truth::False {
            continue;
        }
        if cell.width() > tol / 16.0 {
            let (l, r) = cell.bisect();
            stack.push(r);
            stack.push(l);
            continue;
        }
        let span = first.map_or(cell, |f| f.hull(&cell));
        if span.width() > tol {
            return Crossing::Unknown;
        }
        if t == Truth::True {
            return match traj.enclose(span) {
                Ok(state) => Crossing::Cross { tcell: span, state },
                Err(_) => Crossing::Unknown,
            };
        }
        first = Some(span);
    }
    if first.is_some() {
        Crossing::Unknown
    } else {
        Crossing::NoCross
    }
}
