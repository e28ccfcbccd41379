use std::path::PathBuf;
use std::process::{Command, Output};

fn model(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "models", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn golden(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    std::fs::read_to_string(p).unwrap()
}

fn hyprob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyprob"))
        .args(args)
        .env_remove("HYPROB_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn bounds(text: &str) -> (f64, f64) {
    let line = text.lines().find(|l| l.starts_with("probability:")).unwrap();
    let inner = line.split(['[', ']']).nth(1).unwrap();
    let mut it = inner.split(',').map(|s| s.trim().parse::<f64>().unwrap());
    (it.next().unwrap(), it.next().unwrap())
}

#[test]
fn text_report_meets_width() {
    let o = hyprob(&["--model", &model("threshold.pdrh"), "--epsilon", "1e-3", "--k", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let (lo, hi) = bounds(&stdout(&o));
    assert!(hi - lo <= 1e-3 && lo <= 0.1492 && 0.1491 <= hi, "[{lo}, {hi}]");
}

#[test]
fn both_modes_print_sample_size_and_verdict() {
    let o = hyprob(&[
        "--model",
        &model("threshold.pdrh"),
        "--mode",
        "both",
        "--zeta",
        "5e-3",
        "--conf",
        "0.99",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("N=92104"), "{s}");
    assert!(s.contains("verdict: OVERLAP"), "{s}");
}

#[test]
fn malformed_model_reports_location() {
    let dir = std::env::temp_dir().join(format!("hyprob-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.pdrh");
    std::fs::write(&path, "[0,1]time;\n[0,1]x;\n{ mode1 flow: }\n").unwrap();
    let o = hyprob(&["--model", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("bad.pdrh:3:9:"), "{err}");
}

#[test]
fn input_errors_exit_2() {
    assert_eq!(hyprob(&["--model", "/no/such/file.pdrh"]).status.code(), Some(2));
    let m = model("threshold.pdrh");
    assert_eq!(hyprob(&["--model", &m, "--epsilon", "0"]).status.code(), Some(2));
    assert_eq!(hyprob(&["--model", &m, "--tail-frac", "1"]).status.code(), Some(2));
    assert_eq!(hyprob(&["--model", &m, "--branch", "diagonal"]).status.code(), Some(2));
}

#[test]
fn unmet_epsilon_exits_1() {
    let o = hyprob(&[
        "--model",
        &model("threshold.pdrh"),
        "--epsilon",
        "1e-5",
        "--delta-min",
        "1e-3",
        "--tol-min",
        "1e-3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("status: epsilon_unmet"));
    let (lo, hi) = bounds(&s);
    assert!(lo <= 0.1492 && 0.1491 <= hi);
}

#[test]
fn box_cap_exits_3() {
    let o = hyprob(&["--model", &model("threshold.pdrh"), "--max-boxes", "3"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("status: resource_limit"));
}

#[test]
fn deterministic_json_matches_golden() {
    for (file, eps, out) in [("threshold.pdrh", "1e-3", "threshold.json"), ("projectile.pdrh", "1e-2", "projectile.json")] {
        let o = hyprob(&[
            "--model",
            &model(file),
            "--epsilon",
            eps,
            "--output",
            "json",
            "--threads",
            "1",
            "--deterministic",
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout(&o), golden(out), "{file}");
    }
}

#[test]
fn deterministic_csv_matches_golden() {
    let o = hyprob(&[
        "--model",
        &model("two-normals.pdrh"),
        "--epsilon",
        "5e-2",
        "--output",
        "csv",
        "--threads",
        "1",
        "--deterministic",
    ]);
    assert_eq!(stdout(&o), golden("two-normals.csv"));
}

#[test]
fn thread_count_from_environment() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_hyprob"))
            .args(["--model", &model("projectile.pdrh"), "--epsilon", "1e-2", "--output", "json", "--deterministic"])
            .env("HYPROB_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    let two = run("2");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(run("0").status.code(), Some(2));
}

#[test]
fn json_report_has_budget_and_mc() {
    let o = hyprob(&[
        "--model",
        &model("threshold.pdrh"),
        "--mode",
        "both",
        "--zeta",
        "2e-2",
        "--output",
        "json",
        "--deterministic",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["version"], 1);
    assert_eq!(v["verdict"], "OVERLAP");
    assert!(v["verify"]["wall_time_s"].is_null());
    let budget = &v["verify"]["branches"][0]["budget"];
    for key in ["eps_inf", "eps_prob", "per_var", "t", "l"] {
        assert!(budget[key].is_number(), "{key}");
    }
    assert_eq!(v["mc"]["n"], 5757);
}

#[test]
fn nondeterministic_grid_csv() {
    let o = hyprob(&[
        "--model",
        &model("bouncing-ball.pdrh"),
        "--mode",
        "mc",
        "--zeta",
        "5e-2",
        "--grid",
        "3,2",
        "--output",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert_eq!(s.lines().filter(|l| l.starts_with("mc_point,")).count(), 6, "{s}");
    assert_eq!(hyprob(&["--model", &model("bouncing-ball.pdrh"), "--mode", "mc", "--grid", "1,2,3"]).status.code(), Some(2));
}

#[test]
fn fixtures_parse() {
    for f in ["prostate.pdrh", "car.pdrh", "starvation.pdrh", "bouncing-ball.pdrh", "two-normals.pdrh"] {
        let o = hyprob(&["--model", &model(f), "--mode", "mc", "--zeta", "0.2"]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
