use std::path::Path;
use std::process::{Command, Output};

fn evotask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evotask")).args(args).env_remove("EVOTASK_OUT").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "run", "--scenario", "mtl", "--reps", "2", "--seed", "7", "--out", out, "--set", "k=6", "--set", "n=8",
        "--set", "n_test=50", "--set", "k_cold=200", "--set", "k_warm=50",
    ];
    args.extend_from_slice(extra);
    evotask(&args)
}

#[test]
fn run_writes_one_row_per_task_and_rep() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rep,j,k,horizon,n_train,error,prob_error,risk,ess");
    assert_eq!(lines.count(), 12);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["results_schema"], 1);
    assert_eq!(manifest["config"]["k"], "6");
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run(a.path(), &["--workers", "1"]).status.success());
    assert!(small_run(b.path(), &["--workers", "2"]).status.success());
    let ra = std::fs::read(a.path().join("results.csv")).unwrap();
    let rb = std::fs::read(b.path().join("results.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn manifest_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run(a.path(), &["--set", "scenario=cl", "--set", "b=2"]).status.success());
    let manifest = a.path().join("manifest.json");
    let o = evotask(&["run", "--config", manifest.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.path().join("results.csv")).unwrap(),
        std::fs::read(b.path().join("results.csv")).unwrap()
    );
}

#[test]
fn snapshots_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &["--set", "snapshots=true"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let snaps = std::fs::read_dir(dir.path().join("snapshots")).unwrap().count();
    assert_eq!(snaps, 12);
}

#[test]
fn invalid_scenario_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = evotask(&["run", "--scenario", "bogus", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("bogus") && e.contains("mtl") && e.contains("scd"), "{e}");
}

#[test]
fn config_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "k = 5\n# comment\nlambda0 = abc\n").unwrap();
    let o = evotask(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("bad.conf:3") && e.contains("lambda0"), "{e}");
}

#[test]
fn unknown_key_is_rejected() {
    let o = evotask(&["run", "--set", "nope=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn ess_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ess.csv");
    let o = evotask(&[
        "ess", "--n", "10,100", "--d", "1e-3:1:4", "--j", "5,10", "--k", "10", "--window", "4,6/3", "--output",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let headers = rows.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "window_6/3"));
    let recs: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 16);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for r in &recs {
        let n: f64 = r[col("n")].parse().unwrap();
        let fwd: f64 = r[col("ess_forward")].parse().unwrap();
        let comb: f64 = r[col("ess_combined")].parse().unwrap();
        assert!(fwd >= n - 1e-9 && comb >= fwd - 1e-9);
    }
}

#[test]
fn ess_rejects_task_beyond_k() {
    let o = evotask(&["ess", "--n", "10", "--d", "0.1", "--j", "11", "--k", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn diag_reports_each_lag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pacf.csv");
    let o = evotask(&[
        "diag", "--set", "k=40", "--set", "n=20", "--set", "mode=random_walk", "--max-lag", "4", "--output",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("lag,mean,std,components,band"));
}

#[test]
fn convert_then_run_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..400 {
        let x = (i as f64 * 0.37).sin();
        let y = (i as f64 * 0.11).cos();
        let label = if x + y * (i as f64 / 400.0) > 0.0 { 1 } else { 2 };
        text.push_str(&format!("{x},{y},{label}\n"));
    }
    std::fs::write(&raw, text).unwrap();
    let conv = dir.path().join("tasks.csv");
    let o = evotask(&[
        "convert", "--input", raw.to_str().unwrap(), "--output", conv.to_str().unwrap(), "--segment-size", "100",
        "--test-per-task", "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&conv).unwrap().lines().count(), 401);

    let out = dir.path().join("out");
    let o = evotask(&[
        "run", "--scenario", "scd", "--out", out.to_str().unwrap(), "--set", "data=csv", "--set",
        &format!("csv_path={}", raw.display()), "--set", "segment_size=100", "--set", "test_per_task=20", "--set",
        "rff_q=20", "--set", "k_cold=100", "--set", "k_warm=20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 5);
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    assert_eq!(evotask(&["--help"]).status.code(), Some(0));
    assert_eq!(evotask(&["frobnicate"]).status.code(), Some(1));
}
