//! Box-level decisions for bounded reachability.
//!
//! The mode graph is unrolled as a path tree. In every mode the flow is
//! enclosed over `[0, T]` of local time and scanned cell by cell: a jump
//! happens the first time one of the guards holds, an invariant violation
//! or an exit from the state domain ends the trajectory, and so does the
//! time bound. Each scan tracks both what may happen for some parameter in
//! the box and what certainly happens for all of them, which yields a
//! three-valued "reaches the goal" answer per box.

use serde::Serialize;
use thiserror::Error;

use crate::flowenc::{CompiledModel, FlowError, OdeConfig, Trajectory};
use crate::interval::Interval;
use crate::logic::Truth;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecideError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("guards of two jumps out of mode {mode} both hold over time {tcell}")]
    AmbiguousJump { mode: u32, tcell: Interval },
    #[error("precision floor reached")]
    PrecisionFloor,
}

/// Whether the goal counts only after exactly `k` jumps or after any
/// number up to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Steps {
    #[default]
    Exact,
    Within,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Precision {
    /// Margin by which atoms are weakened or strengthened.
    pub delta: f64,
    /// Smallest time cell examined.
    pub time_tol: f64,
    pub order: usize,
    /// Smallest ODE step as a fraction of the time bound.
    pub step_floor: f64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision {
            delta: 1e-3,
            time_tol: 1e-3,
            order: 3,
            step_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionLimits {
    pub delta_min: f64,
    pub tol_min: f64,
    pub max_order: usize,
}

impl Default for PrecisionLimits {
    fn default() -> Self {
        PrecisionLimits {
            delta_min: 1e-12,
            tol_min: 1e-9,
            max_order: 3,
        }
    }
}

/// Halves `delta` and the time tolerance and raises the ODE order by one,
/// each as far as `limits` allow.
pub fn refine_precision(prec: &Precision, limits: &PrecisionLimits) -> Result<Precision, DecideError> {
    let delta = if prec.delta / 2.0 >= limits.delta_min { prec.delta / 2.0 } else { prec.delta };
    let time_tol = if prec.time_tol / 2.0 >= limits.tol_min { prec.time_tol / 2.0 } else { prec.time_tol };
    let order = (prec.order + 1).min(limits.max_order.max(prec.order));
    if delta == prec.delta && time_tol == prec.time_tol && order == prec.order {
        return Err(DecideError::PrecisionFloor);
    }
    Ok(Precision {
        delta,
        time_tol,
        order,
        step_floor: prec.step_floor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub mode: u32,
    pub depth: usize,
    pub tcell: Interval,
    pub state: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Unsat,
    DeltaSat(Option<Witness>),
}

impl Verdict {
    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoxClass {
    Outside,
    Inside,
    Mixed,
}

/// Compiled model plus unrolling settings.
#[derive(Debug, Clone)]
pub struct Decider {
    models: Vec<CompiledModel>,
    base_order: usize,
    pub k: usize,
    pub steps: Steps,
    /// Time cells examined per mode visit before giving up on a box.
    pub cell_cap: usize,
}

#[derive(Debug, Clone)]
struct Outcome {
    reach: Truth,
    witness: Option<Witness>,
}

impl Decider {
    pub fn new(m: &Model, k: usize, steps: Steps, ode: OdeConfig, max_order: usize) -> Result<Decider, DecideError> {
        let models = (ode.order..=max_order.max(ode.order))
            .map(|order| CompiledModel::new(m, OdeConfig { order, ..ode }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Decider {
            models,
            base_order: ode.order,
            k,
            steps,
            cell_cap: 1 << 16,
        })
    }

    pub fn model(&self) -> &CompiledModel {
        &self.models[0]
    }

    fn compiled(&self, order: usize) -> &CompiledModel {
        let i = order.saturating_sub(self.base_order).min(self.models.len() - 1);
        &self.models[i]
    }

    /// Three-valued "every / no parameter in the box reaches the goal".
    pub fn reach_truth(&self, params: &[Interval], prec: &Precision) -> Result<Truth, DecideError> {
        Ok(self.explore_root(params, prec)?.reach)
    }

    pub fn eval_phi(&self, params: &[Interval], prec: &Precision) -> Result<Verdict, DecideError> {
        let o = self.explore_root(params, prec)?;
        Ok(match o.reach {
            Truth::False => Verdict::Unsat,
            _ => Verdict::DeltaSat(o.witness),
        })
    }

    pub fn eval_phi_c(&self, params: &[Interval], prec: &Precision) -> Result<Verdict, DecideError> {
        let o = self.explore_root(params, prec)?;
        Ok(match o.reach {
            Truth::True => Verdict::Unsat,
            _ => Verdict::DeltaSat(None),
        })
    }

    pub fn classify(&self, params: &[Interval], prec: &Precision) -> Result<BoxClass, DecideError> {
        Ok(match self.reach_truth(params, prec)? {
            Truth::False => BoxClass::Outside,
            Truth::True => BoxClass::Inside,
            Truth::Unknown => BoxClass::Mixed,
        })
    }

    fn explore_root(&self, params: &[Interval], prec: &Precision) -> Result<Outcome, DecideError> {
        let cm = self.compiled(prec.order);
        let entry = match cm.initial_state(params) {
            Ok(x) => x,
            Err(_) => {
                return Ok(Outcome {
                    reach: Truth::Unknown,
                    witness: None,
                })
            }
        };
        self.explore(cm, params, prec, cm.init_mode, 0, &entry)
    }

    fn goal_counts(&self, depth: usize) -> bool {
        match self.steps {
            Steps::Exact => depth == self.k,
            Steps::Within => depth <= self.k,
        }
    }

    fn explore(
        &self,
        cm: &CompiledModel,
        params: &[Interval],
        prec: &Precision,
        mode_id: u32,
        depth: usize,
        entry: &[Interval],
    ) -> Result<Outcome, DecideError> {
        let unknown = Outcome {
            reach: Truth::Unknown,
            witness: None,
        };
        let mode = cm.mode(mode_id)?;
        let goal_here = mode_id == cm.goal_mode && self.goal_counts(depth);
        let goal_c_here = mode_id == cm.goal_c_mode && self.goal_counts(depth);
        let may_jump = depth < self.k;
        let ode = OdeConfig {
            min_step_frac: prec.step_floor,
            ..cm.ode
        };
        let traj = Trajectory::new(mode, params, entry, cm.time_bound, &ode);
        let delta = prec.delta;
        let nj = mode.jumps.len();

        let mut alive = Truth::True;
        let mut reach_may = false;
        let mut witness = None;
        let mut succ: Vec<Option<(Interval, Vec<Interval>)>> = vec![None; nj];
        let mut sole_guard: Option<usize> = None;
        let mut several_guards = false;
        let mut side_exits = false;
        let mut ended_by: Option<usize> = None;
        let mut cells = 0usize;

        let mut stack: Vec<Interval> = traj.initial_cells(64).into_iter().rev().collect();
        while let Some(c) = stack.pop() {
            if alive == Truth::False {
                break;
            }
            cells += 1;
            if cells > self.cell_cap {
                return Ok(unknown);
            }
            let Ok(state) = traj.enclose(c) else {
                return Ok(unknown);
            };
            let vars = traj.predicate_vars(&state);
            let inv = mode.invariant.eval(&vars, delta);
            let dom = cm.in_domain(&state);
            let guards: Vec<Truth> = mode.jumps.iter().map(|j| j.guard.eval(&vars, delta)).collect();
            let goal = if goal_here || goal_c_here {
                let g = if goal_here { cm.goal.eval(&vars, delta) } else { Truth::Unknown };
                let gc = if goal_c_here { cm.goal_c.eval(&vars, delta) } else { Truth::Unknown };
                if g == Truth::False {
                    Truth::False
                } else if gc == Truth::False {
                    Truth::True
                } else {
                    Truth::Unknown
                }
            } else {
                Truth::False
            };

            let undecided = goal == Truth::Unknown
                || inv == Truth::Unknown
                || dom == Truth::Unknown
                || guards.iter().any(|g| *g == Truth::Unknown);
            if undecided && c.width() > prec.time_tol && time_sensitive(&traj, c, &state) {
                let (l, r) = c.bisect();
                stack.push(r);
                stack.push(l);
                cells -= 1;
                continue;
            }

            let live = alive.and(inv).and(dom);
            if alive == Truth::True && inv == Truth::True && dom == Truth::True && goal == Truth::True {
                return Ok(Outcome {
                    reach: Truth::True,
                    witness: Some(Witness {
                        mode: mode_id,
                        depth,
                        tcell: c,
                        state,
                    }),
                });
            }
            if live.may_hold() && goal.may_hold() && !reach_may {
                reach_may = true;
                witness = Some(Witness {
                    mode: mode_id,
                    depth,
                    tcell: c,
                    state: state.clone(),
                });
            }
            if live.may_hold() {
                let certain: Vec<usize> = (0..nj).filter(|&i| guards[i] == Truth::True).collect();
                if certain.len() > 1 {
                    return Err(DecideError::AmbiguousJump { mode: mode_id, tcell: c });
                }
                for (i, g) in guards.iter().enumerate() {
                    if !g.may_hold() {
                        continue;
                    }
                    match sole_guard {
                        None => sole_guard = Some(i),
                        Some(s) if s != i => several_guards = true,
                        _ => {}
                    }
                    if may_jump {
                        let Ok(reset) = mode.jumps[i].reset.eval(&vars) else {
                            return Ok(unknown);
                        };
                        succ[i] = Some(match succ[i].take() {
                            None => (c, reset),
                            Some((t, acc)) => (t.hull(&c), acc.iter().zip(&reset).map(|(a, b)| a.hull(b)).collect()),
                        });
                    }
                }
                if inv != Truth::True || dom != Truth::True {
                    side_exits = true;
                }
            }
            let leaves = guards.iter().any(|g| *g == Truth::True) || inv == Truth::False || dom == Truth::False;
            if leaves {
                if inv == Truth::True && dom == Truth::True {
                    ended_by = guards.iter().position(|g| *g == Truth::True);
                }
                alive = Truth::False;
            } else if guards.iter().any(|g| *g == Truth::Unknown) || inv != Truth::True || dom != Truth::True {
                alive = alive.and(Truth::Unknown);
            }
        }
        if alive.may_hold() && traj.covered() < cm.time_bound {
            return Ok(unknown);
        }

        let mut reach_any = reach_may;
        let mut must = false;
        for (i, s) in succ.iter().enumerate() {
            let Some((_, entry)) = s else { continue };
            let sub = self.explore(cm, params, prec, mode.jumps[i].target, depth + 1, entry)?;
            if sub.reach.may_hold() {
                reach_any = true;
                if witness.is_none() {
                    witness = sub.witness.clone();
                }
            }
            let forced = !several_guards && !side_exits && ended_by == Some(i) && sole_guard == Some(i);
            if forced && sub.reach == Truth::True {
                must = true;
            }
        }
        Ok(Outcome {
            reach: if must {
                Truth::True
            } else if reach_any {
                Truth::Unknown
            } else {
                Truth::False
            },
            witness,
        })
    }
}

/// Whether splitting `c` can tighten the state enclosure, judged by how
/// much wider the enclosure over `c` is than at its endpoints.
fn time_sensitive(traj: &Trajectory, c: Interval, state: &[Interval]) -> bool {
    let (Ok(a), Ok(b)) = (traj.enclose(Interval::point(c.lo())), traj.enclose(Interval::point(c.hi()))) else {
        return true;
    };
    state
        .iter()
        .zip(a.iter().zip(&b))
        .any(|(s, (x, y))| s.width() > 1.01 * x.width().max(y.width()) + 1e-300)
}

fn decider_for(m: &Model, k: usize, prec: &Precision) -> Result<Decider, DecideError> {
    let ode = OdeConfig {
        order: prec.order,
        ..OdeConfig::default()
    };
    Decider::new(m, k, Steps::Exact, ode, prec.order)
}

/// `params` follows [`Model::param_names`]; discrete parameters must be
/// substituted beforehand.
pub fn eval_phi(m: &Model, params: &[Interval], k: usize, prec: &Precision) -> Result<Verdict, DecideError> {
    decider_for(m, k, prec)?.eval_phi(params, prec)
}

pub fn eval_phi_c(m: &Model, params: &[Interval], k: usize, prec: &Precision) -> Result<Verdict, DecideError> {
    decider_for(m, k, prec)?.eval_phi_c(params, prec)
}

pub fn classify_box(m: &Model, params: &[Interval], k: usize, prec: &Precision) -> Result<BoxClass, DecideError> {
    decider_for(m, k, prec)?.classify(params, prec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use proptest::prelude::*;

    fn threshold() -> Model {
        parse_model(
            "MODEL_TYPE(HA)\n[0,1]time;\n[-10,10]x;\n[-5,5]r;\n\
             { mode1; flow: d/dt[x]=0; }\ninit: @1(x = r);\ngoal: @1(x >= 1);\n",
        )
        .unwrap()
    }

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b)
    }

    #[test]
    fn threshold_boxes() {
        let m = threshold();
        let p = Precision::default();
        assert_eq!(eval_phi(&m, &[iv(-1.0, 0.5)], 0, &p).unwrap(), Verdict::Unsat);
        assert!(!eval_phi(&m, &[iv(2.0, 3.0)], 0, &p).unwrap().is_unsat());
        assert_eq!(eval_phi_c(&m, &[iv(2.0, 3.0)], 0, &p).unwrap(), Verdict::Unsat);
        assert!(!eval_phi_c(&m, &[iv(-1.0, 0.5)], 0, &p).unwrap().is_unsat());
        assert_eq!(classify_box(&m, &[iv(-1.0, 0.5)], 0, &p).unwrap(), BoxClass::Outside);
        assert_eq!(classify_box(&m, &[iv(2.0, 3.0)], 0, &p).unwrap(), BoxClass::Inside);
        assert_eq!(classify_box(&m, &[iv(0.5, 1.5)], 0, &p).unwrap(), BoxClass::Mixed);
        assert_eq!(classify_box(&m, &[iv(2.2, 2.3)], 0, &p).unwrap(), BoxClass::Inside);
    }

    #[test]
    fn coarse_precision_stays_mixed_until_refined() {
        let m = threshold();
        let limits = PrecisionLimits::default();
        let mut p = Precision {
            delta: 0.1,
            ..Precision::default()
        };
        let b = [iv(1.0 + 1e-3, 1.5)];
        assert_eq!(classify_box(&m, &b, 0, &p).unwrap(), BoxClass::Mixed);
        let mut n = 0;
        while classify_box(&m, &b, 0, &p).unwrap() == BoxClass::Mixed {
            p = refine_precision(&p, &limits).unwrap();
            n += 1;
        }
        assert_eq!(classify_box(&m, &b, 0, &p).unwrap(), BoxClass::Inside);
        assert!(n <= 8);
    }

    #[test]
    fn refining_halves() {
        let limits = PrecisionLimits::default();
        let p = Precision {
            delta: 1e-2,
            time_tol: 1e-3,
            ..Precision::default()
        };
        let q = refine_precision(&p, &limits).unwrap();
        assert_eq!((q.delta, q.time_tol), (5e-3, 5e-4));
        let floor = Precision {
            delta: 1e-12,
            time_tol: 1e-9,
            ..p
        };
        assert_eq!(refine_precision(&floor, &limits), Err(DecideError::PrecisionFloor));
    }

    fn projectile(goal: &str) -> Model {
        parse_model(&format!(
            "MODEL_TYPE(HA)\n[0,10]time;\n[-1000,1000]Sx;\n[-1000,1000]Sy;\n[-1000,1000]vy;\n\
             [10,40]v0;\n#define g 9.8\n#define a 0.7854\n\
             {{ mode1; flow: sol[Sx]=Sx + v0*cos(a)*t; sol[Sy]=Sy + vy*t - g*t^2/2; sol[vy]=vy - g*t;\n\
               jump: (and (Sy <= 0) (vy < 0))==>@2(vy'=-0.9*vy); }}\n\
             {{ mode2; flow: sol[Sx]=Sx; sol[Sy]=Sy; sol[vy]=vy; }}\n\
             init: @1(and (Sx = 0) (Sy = 0) (vy = v0*sin(a)));\ngoal: @1({goal});\n"
        ))
        .unwrap()
    }

    fn range(v0: f64) -> f64 {
        v0 * v0 * (2.0 * 0.7854f64).sin() / 9.8
    }

    #[test]
    fn projectile_range() {
        let m = projectile("Sx >= 100");
        let p = Precision::default();
        let threshold = (100.0 * 9.8 / (2.0 * 0.7854f64).sin()).sqrt();
        assert!(range(threshold - 0.5) < 100.0 && range(threshold + 0.5) > 100.0);
        assert!(range(31.0) < 100.0 && range(32.0) > 100.0);
        assert_eq!(classify_box(&m, &[iv(30.0, 31.0)], 0, &p).unwrap(), BoxClass::Outside);
        assert_eq!(classify_box(&m, &[iv(32.0, 33.0)], 0, &p).unwrap(), BoxClass::Inside);
        assert_eq!(classify_box(&m, &[iv(29.0, threshold - 0.05)], 0, &p).unwrap(), BoxClass::Outside);
        assert_eq!(classify_box(&m, &[iv(threshold + 0.05, 35.0)], 0, &p).unwrap(), BoxClass::Inside);
        assert_eq!(classify_box(&m, &[iv(threshold - 0.05, threshold + 0.05)], 0, &p).unwrap(), BoxClass::Mixed);
    }

    #[test]
    fn jumps_and_depth() {
        let m = projectile("Sx >= 100");
        let p = Precision::default();
        let d1 = Decider::new(&m, 1, Steps::Exact, OdeConfig::default(), 3).unwrap();
        // after landing the ball rests in mode 2 at its range, but the goal sits in mode 1
        assert_eq!(d1.classify(&[iv(32.0, 33.0)], &p).unwrap(), BoxClass::Outside);
        let mut m2 = m.clone();
        m2.goal.mode = 2;
        m2.goal_c = None;
        let d1 = Decider::new(&m2, 1, Steps::Exact, OdeConfig::default(), 3).unwrap();
        assert_eq!(d1.classify(&[iv(32.0, 33.0)], &p).unwrap(), BoxClass::Inside);
        assert_eq!(d1.classify(&[iv(20.0, 25.0)], &p).unwrap(), BoxClass::Outside);
        let w = Decider::new(&m, 1, Steps::Within, OdeConfig::default(), 3).unwrap();
        assert_eq!(w.classify(&[iv(32.0, 33.0)], &p).unwrap(), BoxClass::Inside);
    }

    #[test]
    fn ambiguous_jumps_are_errors() {
        let m = parse_model(
            "[0,1]time;\n[-10,10]x;\n[0,1]r;\n\
             { mode1; flow: d/dt[x]=1; jump: (x >= 0.5)==>@2(); (x >= 0.2)==>@2(); }\n\
             { mode2; flow: d/dt[x]=0; }\ninit: @1(x = r);\ngoal: @2(x >= 5);\n",
        )
        .unwrap();
        let r = classify_box(&m, &[iv(0.6, 0.7)], 1, &Precision::default());
        assert!(matches!(r, Err(DecideError::AmbiguousJump { .. })));
    }

    fn ode_threshold() -> Model {
        parse_model(
            "MODEL_TYPE(HA)\n[0,2]time;\n[-10,10]x;\n[-2,2]r;\n\
             { mode1; flow: d/dt[x]=r - 0.5*x; }\ninit: @1(x = 0);\ngoal: @1(x >= 1);\n",
        )
        .unwrap()
    }

    fn simulate(r: f64) -> bool {
        // x(t) = 2r(1 - exp(-t/2)), increasing for r > 0
        2.0 * r * (1.0 - (-1.0f64).exp()) >= 1.0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn verdicts_agree_with_points(lo in -2.0f64..2.0, w in 0.0f64..0.5, s in proptest::collection::vec(0.0f64..=1.0, 10)) {
            let m = ode_threshold();
            let b = iv(lo, (lo + w).min(2.0).max(lo));
            let class = classify_box(&m, &[b], 0, &Precision::default()).unwrap();
            for f in s {
                let r = b.lo() + f * (b.hi() - b.lo());
                match class {
                    BoxClass::Outside => prop_assert!(!simulate(r)),
                    BoxClass::Inside => prop_assert!(simulate(r)),
                    BoxClass::Mixed => {}
                }
            }
        }

        #[test]
        fn refinement_keeps_decisions(lo in -2.0f64..2.0, w in 0.0f64..0.5, d in 1e-4f64..0.2) {
            let m = ode_threshold();
            let b = [iv(lo, (lo + w).min(2.0).max(lo))];
            let p = Precision { delta: d, time_tol: 1e-2, ..Precision::default() };
            let q = refine_precision(&p, &PrecisionLimits::default()).unwrap();
            let c = classify_box(&m, &b, 0, &p).unwrap();
            if c != BoxClass::Mixed {
                prop_assert_eq!(classify_box(&m, &b, 0, &q).unwrap(), c);
            }
        }

        #[test]
        fn sub_boxes_keep_decisions(lo in -2.0f64..2.0, w in 0.0f64..0.5, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let m = ode_threshold();
            let bx = iv(lo, (lo + w).min(2.0).max(lo));
            let (a, b) = (a.min(b), a.max(b));
            let sub = iv(bx.lo() + a * bx.width(), (bx.lo() + b * bx.width()).min(bx.hi()));
            let p = Precision::default();
            let c = classify_box(&m, &[bx], 0, &p).unwrap();
            if c != BoxClass::Mixed {
                prop_assert_eq!(classify_box(&m, &[sub], 0, &p).unwrap(), c);
            }
        }
    }
}
