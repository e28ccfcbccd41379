//! Command-line driver: verified enclosure, Monte Carlo estimate, or both.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hyprob::decide::Steps;
use hyprob::model::{parse_model, Model, ModelError};
use hyprob::montecarlo::{mc_estimate, npha_envelope, McError, McOptions, McResult};
use hyprob::reach::{compute_main, Branching, ReachError, ReachOptions, ReachReport, Status, REPORT_VERSION};
use hyprob::Interval;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunMode {
    Verify,
    Mc,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Branch {
    Full,
    Widest,
}

/// Bounded reachability probabilities of hybrid systems with random and
/// nondeterministic parameters.
#[derive(Debug, Parser)]
#[command(name = "hyprob", version, about)]
struct Args {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = RunMode::Verify)]
    mode: RunMode,
    /// Requested width of the probability enclosure.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Share of the precision spent on truncating unbounded supports.
    #[arg(long, default_value_t = 0.1)]
    tail_frac: f64,
    /// Number of discrete transitions.
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Count the goal after at most k transitions.
    #[arg(long, conflicts_with = "exact")]
    within: bool,
    /// Count the goal after exactly k transitions (default).
    #[arg(long)]
    exact: bool,
    /// Initial atom margin.
    #[arg(long)]
    delta: Option<f64>,
    /// Smallest atom margin reached by refinement.
    #[arg(long)]
    delta_min: Option<f64>,
    /// Smallest time cell reached by refinement.
    #[arg(long)]
    tol_min: Option<f64>,
    /// Highest Taylor order used for ODE enclosures.
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, value_enum, default_value_t = Branch::Full)]
    branch: Branch,
    /// Worker threads (all cores when unset).
    #[arg(long, env = "HYPROB_THREADS")]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of the Monte Carlo confidence interval.
    #[arg(long, default_value_t = 5e-3)]
    zeta: f64,
    /// Confidence of the Monte Carlo interval.
    #[arg(long, default_value_t = 0.99)]
    conf: f64,
    /// Grid points per nondeterministic parameter for Monte Carlo.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    /// Use the two-sided Hoeffding sample size.
    #[arg(long)]
    two_sided: bool,
    /// Simulation steps per mode.
    #[arg(long)]
    steps_per_mode: Option<usize>,
    #[arg(long, value_enum, default_value_t = Output::Text)]
    output: Output,
    /// Cap on the number of parameter boxes examined.
    #[arg(long)]
    max_boxes: Option<usize>,
    /// Omit timings so that output bytes are reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "UPPERCASE")]
enum Verdict {
    Overlap,
    Disjoint,
}

#[derive(Debug, Serialize)]
struct Run {
    version: u32,
    model: String,
    verify: Option<ReachReport>,
    mc: Option<McResult>,
    verdict: Option<Verdict>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Limit(String),
}

impl From<ReachError> for Failure {
    fn from(e: ReachError) -> Self {
        match e {
            ReachError::DegenerateBox => Failure::Input(e.to_string()),
            e => Failure::Limit(e.to_string()),
        }
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::Distribution(_) => Failure::Input(e.to_string()),
            e => Failure::Limit(e.to_string()),
        }
    }
}

fn load(path: &PathBuf) -> Result<Model, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e: ModelError| {
        let msg = match e.location(&text) {
            Some((line, col)) => format!("{}:{line}:{col}: {e}", path.display()),
            None => format!("{}: {e}", path.display()),
        };
        Failure::Input(msg)
    })
}

fn check(args: &Args) -> Result<(), Failure> {
    let bad = |m: &str| Err(Failure::Input(m.to_string()));
    if !(args.epsilon > 0.0 && args.epsilon <= 1.0) {
        return bad("--epsilon must lie in (0, 1]");
    }
    if !(args.tail_frac > 0.0 && args.tail_frac < 1.0) {
        return bad("--tail-frac must lie in (0, 1)");
    }
    if !(args.zeta > 0.0 && args.zeta < 1.0) || !(args.conf > 0.0 && args.conf < 1.0) {
        return bad("--zeta and --conf must lie in (0, 1)");
    }
    if args.threads == Some(0) {
        return bad("--threads must be positive");
    }
    Ok(())
}

fn reach_options(args: &Args) -> ReachOptions {
    let mut o = ReachOptions {
        k: args.k,
        steps: if args.within { Steps::Within } else { Steps::Exact },
        tail_frac: args.tail_frac,
        branching: match args.branch {
            Branch::Full => Branching::Full,
            Branch::Widest => Branching::Widest,
        },
        ..ReachOptions::default()
    };
    if let Some(d) = args.delta {
        o.precision.delta = d;
    }
    if let Some(d) = args.delta_min {
        o.limits.delta_min = d;
    }
    if let Some(t) = args.tol_min {
        o.limits.tol_min = t;
    }
    if let Some(m) = args.max_order {
        o.limits.max_order = m;
    }
    if let Some(b) = args.max_boxes {
        o.max_boxes = b;
    }
    o
}

fn mc_options(args: &Args) -> McOptions {
    let mut o = McOptions {
        k: args.k,
        steps: if args.within { Steps::Within } else { Steps::Exact },
        seed: args.seed,
        two_sided: args.two_sided,
        ..McOptions::default()
    };
    if let Some(s) = args.steps_per_mode {
        o.steps_per_mode = s;
    }
    o
}

fn monte_carlo(m: &Model, args: &Args) -> Result<McResult, Failure> {
    let opts = mc_options(args);
    if m.nondet_params.is_empty() {
        return Ok(mc_estimate(m, args.zeta, args.conf, None, &opts)?);
    }
    let grid = match args.grid.len() {
        0 => vec![5; m.nondet_params.len()],
        1 => vec![args.grid[0]; m.nondet_params.len()],
        n if n == m.nondet_params.len() => args.grid.clone(),
        n => {
            return Err(Failure::Input(format!(
                "--grid has {n} entries for {} nondeterministic parameters",
                m.nondet_params.len()
            )))
        }
    };
    Ok(npha_envelope(m, &grid, args.zeta, args.conf, &opts)?)
}

fn run(args: &Args) -> Result<(Run, Status, Vec<String>), Failure> {
    check(args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    // a pool may already exist when run twice in one process
    let _ = pool.build_global();
    let m = load(&args.model)?;
    let verify = match args.mode {
        RunMode::Verify | RunMode::Both => {
            let mut r = compute_main(&m, args.epsilon, &reach_options(args))?;
            if args.deterministic {
                r.wall_time_s = None;
            }
            Some(r)
        }
        RunMode::Mc => None,
    };
    let mc = match args.mode {
        RunMode::Mc | RunMode::Both => Some(monte_carlo(&m, args)?),
        RunMode::Verify => None,
    };
    let verdict = match (&verify, &mc) {
        (Some(v), Some(c)) => Some(if v.reported.intersect(&c.ci).is_some() {
            Verdict::Overlap
        } else {
            Verdict::Disjoint
        }),
        _ => None,
    };
    let status = verify.as_ref().map_or(Status::Ok, |v| v.status);
    let names = m.nondet_params.iter().map(|(n, _)| n.clone()).collect();
    let model = args
        .model
        .file_name()
        .map_or_else(|| args.model.display().to_string(), |f| f.to_string_lossy().into_owned());
    Ok((
        Run {
            version: REPORT_VERSION,
            model,
            verify,
            mc,
            verdict,
        },
        status,
        names,
    ))
}

fn interval(x: &Interval) -> String {
    format!("[{:.10}, {:.10}]", x.lo(), x.hi())
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::EpsilonUnmet => "epsilon_unmet",
        Status::ResourceLimit => "resource_limit",
    }
}

fn choice_label(choice: &[(String, f64)]) -> String {
    choice.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ")
}

fn text(run: &Run) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", run.model);
    if let Some(v) = &run.verify {
        let _ = writeln!(s, "type: {}", v.model_type);
        let _ = writeln!(s, "probability: {}", interval(&v.reported));
        let _ = writeln!(s, "width: {:.3e} (requested {:.3e})", v.reported.width(), v.epsilon);
        let _ = writeln!(s, "status: {}", status_name(v.status));
        for b in &v.branches {
            let label = choice_label(&b.choice);
            let _ = write!(s, "branch");
            if !label.is_empty() {
                let _ = write!(s, " {label} weight {}", interval(&b.weight));
            }
            let _ = writeln!(
                s,
                ": {} status {} boxes inside {} outside {} undecided {}",
                interval(&b.enclosure.reported),
                status_name(b.status),
                b.boxes.inside,
                b.boxes.outside,
                b.boxes.undecided
            );
            if let Some(e) = &b.budget {
                let _ = writeln!(
                    s,
                    "  budget: tail {:.3e} partition {:.3e} per variable {:.3e} ({} variables)",
                    e.eps_inf, e.eps_prob, e.per_var, e.l
                );
            }
        }
        if let Some(t) = v.wall_time_s {
            let _ = writeln!(s, "time: {t:.3} s");
        }
    }
    if let Some(c) = &run.mc {
        let _ = writeln!(
            s,
            "monte carlo: N={} successes={} estimate={:.6} ci={} (zeta {}, confidence {})",
            c.n,
            c.successes,
            c.estimate,
            interval(&c.ci),
            c.zeta,
            c.conf
        );
        for g in &c.grid {
            let z: Vec<String> = g.z.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "  at ({}): {:.6} {}", z.join(", "), g.estimate, interval(&g.ci));
        }
    }
    if let Some(v) = &run.verdict {
        let _ = writeln!(s, "verdict: {}", if matches!(v, Verdict::Overlap) { "OVERLAP" } else { "DISJOINT" });
    }
    s
}

fn csv(run: &Run, names: &[String]) -> String {
    let mut s = String::from("kind,label,lo,hi,value\n");
    if let Some(v) = &run.verify {
        let r = &v.reported;
        let _ = writeln!(s, "reach,total,{:?},{:?},{}", r.lo(), r.hi(), status_name(v.status));
        for b in &v.branches {
            let e = &b.enclosure.reported;
            let _ = writeln!(s, "branch,{},{:?},{:?},{:?}", choice_label(&b.choice), e.lo(), e.hi(), b.weight.midpoint());
        }
    }
    if let Some(c) = &run.mc {
        let _ = writeln!(s, "mc,N={},{:?},{:?},{:?}", c.n, c.ci.lo(), c.ci.hi(), c.estimate);
        for g in &c.grid {
            let z: Vec<String> = names.iter().zip(&g.z).map(|(n, v)| format!("{n}={v}")).collect();
            let _ = writeln!(s, "mc_point,{},{:?},{:?},{:?}", z.join(" "), g.ci.lo(), g.ci.hi(), g.estimate);
        }
    }
    if let Some(v) = &run.verdict {
        let _ = writeln!(s, "verdict,,,,{}", if matches!(v, Verdict::Overlap) { "OVERLAP" } else { "DISJOINT" });
    }
    s
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok((r, status, names)) => {
            let out = match args.output {
                Output::Json => serde_json::to_string_pretty(&r).expect("report serializes") + "\n",
                Output::Csv => csv(&r, &names),
                Output::Text => text(&r),
            };
            print!("{out}");
            ExitCode::from(match status {
                Status::Ok => 0,
                Status::EpsilonUnmet => 1,
                Status::ResourceLimit => 3,
            })
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Limit(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
