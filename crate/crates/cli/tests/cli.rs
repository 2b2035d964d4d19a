use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldp-online"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn ridge() -> String {
    config("ridge_ring.toml").display().to_string()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn shipped_configs_validate() {
    for name in ["ridge_ring.toml", "logistic_synthetic.toml", "parameter_free.toml"] {
        let o = run(&["validate-config", &config(name).display().to_string()]);
        assert_eq!(code(&o), 0, "{name}: {}", text(&o));
        assert!(text(&o).contains("certificate"));
    }
}

#[test]
fn violated_stepsizes_exit_with_one() {
    let o = run(&["validate-config", &ridge(), "schedules.lambda0=1.0"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("violation: lambda0"));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", &ridge(), "--out", &dir.path().display().to_string(), "--set", "schedules.lambda0=1.0"]);
    assert_eq!(code(&o), 1);
    assert!(files(dir.path()).is_empty());
}

#[test]
fn malformed_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nhorizon = 10\nunknown_key = 3\n").unwrap();
    let o = run(&["validate-config", &bad.display().to_string()]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    let o = run(&["validate-config", &ridge(), "replicates=0"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn runtime_errors_exit_with_two() {
    let o = run(&["validate-config", "/nonexistent/config.toml"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    // the output directory is a regular file
    let f = tempfile::NamedTempFile::new().unwrap();
    let o = run(&["run", &ridge(), "--horizon", "20", "--replicates", "1", "--out", &f.path().display().to_string()]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn out_of_range_requests_are_rejected() {
    let o = run(&["sensitivity", &ridge(), "999999999"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn usage_errors_exit_with_sixty_four() {
    assert_eq!(code(&run(&["frobnicate"])), 64);
    assert_eq!(code(&run(&["run"])), 64);
    assert_eq!(code(&run(&["budget", &ridge()])), 64);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["run", &ridge(), "--horizon", "300", "--replicates", "2", "--out", &d.path().display().to_string()]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    assert_eq!(files(a.path()), vec!["trace.csv".to_string(), "trace.json".into()]);
    for f in ["trace.csv", "trace.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,tracking_error,regret,eps_0,eps_1,eps_2,eps_3,eps_4,drift,dynamic_regret\n"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(json["horizon"], 300);
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", &ridge(), "--dry-run", "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("t = 10:"));
    assert!(!out.exists());
}

#[test]
fn sweep_writes_one_trace_per_point_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        &ridge(),
        "--horizon",
        "200",
        "--replicates",
        "1",
        "--out",
        &dir.path().display().to_string(),
        "--param",
        "schedules.lambda0_fraction=0.5,1.0",
        "--param",
        "noise.sigma=0.5,1.0",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let f = files(dir.path());
    assert_eq!(f.len(), 9, "{f:?}");
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.lines().nth(1).unwrap().starts_with("0,0.5,0.5,"));
}

#[test]
fn failed_sweep_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        &ridge(),
        "--horizon",
        "50",
        "--out",
        &dir.path().display().to_string(),
        "--param",
        "schedules.lambda0=0.001,5.0",
    ]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(files(dir.path()).is_empty());
}

#[test]
fn budget_grows_with_the_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["budget", &ridge(), "100", "1000", "10000", "--out", &dir.path().display().to_string()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("budget.json")).unwrap()).unwrap();
    let learners = json.as_array().unwrap();
    assert_eq!(learners.len(), 5);
    for l in learners {
        let eps: Vec<f64> = l["checkpoints"].as_array().unwrap().iter().map(|p| p["eps"].as_f64().unwrap()).collect();
        assert_eq!(eps.len(), 3);
        assert!(eps.windows(2).all(|w| w[1] > w[0]), "{eps:?}");
    }
    let o = run(&["budget", &ridge(), "100"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("learner 4: eps(100)"));
}

#[test]
fn sensitivity_reports_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sensitivity", &ridge(), "20", "--learner", "1", "--horizon", "100", "--out", &dir.path().display().to_string()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("bound holds at every round"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sensitivity.json")).unwrap()).unwrap();
    assert_eq!(json["learner"], 1);
    assert_eq!(json["divergence"].as_array().unwrap().len(), 101);
}
