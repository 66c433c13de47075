use std::path::Path;
use std::process::{Command, Output};

use fns_cli::BENCH_HEADER;

fn fns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fns"))
        .args(args)
        .env("FNS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn lfa_writes_map_and_reports_smoothing_factor() {
    let dir = tempfile::tempdir().unwrap();
    let o = fns(&[
        "lfa",
        "--problem",
        "poisson",
        "--omega",
        "0.8",
        "--resolution",
        "64",
        "--out-dir",
        p(dir.path()),
        "--name",
        "jac",
    ]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let mu: f64 = value(&out, "mu_high").parse().unwrap();
    assert!((mu - 0.6).abs() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("jac.csv")).unwrap();
    assert_eq!(csv.lines().count(), 64);
    let pgm = std::fs::read(dir.path().join("jac.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let o = fns(&["solve", "--method", "fns", "--checkpoint", "/nonexistent/ck.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint not found"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(fns(&["solve", "--bogus"]).status.code(), Some(2));
    assert_eq!(fns(&["solve", "--method", "multigrid"]).status.code(), Some(2));
    assert_eq!(fns(&["lfa", "--problem", "wave"]).status.code(), Some(2));
}

#[test]
fn direct_and_krylov_solves_write_traces() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = fns(&["solve", "--method", "dst-direct", "--problem", "poisson", "--n", "32", "--trace", p(&trace)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(value(&stdout(&o), "status"), "CONVERGED");
    let o = fns(&["solve", "--method", "cg", "--problem", "poisson", "--n", "32", "--trace", p(&trace)]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(csv.lines().next(), Some("step,relative_residual,matvecs"));
    let last: f64 = csv.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 1e-6);
    let o = fns(&["solve", "--method", "dst-direct", "--problem", "convdiff", "--epsilon", "0.1", "--trace", p(&trace)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_solve_inspect_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("sub/ck.bin");
    let o = fns(&[
        "train",
        "--problem",
        "poisson",
        "--n",
        "16",
        "--sweeps",
        "3",
        "--epochs",
        "30",
        "--batch-size",
        "4",
        "--k",
        "4",
        "--out",
        p(&ck),
    ]);
    assert!(o.status.success(), "{o:?}");
    let loss: f64 = value(&stdout(&o), "final_loss").parse().unwrap();
    assert!(loss.is_finite());
    let history = std::fs::read_to_string(dir.path().join("sub/ck.loss.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);

    let trace = dir.path().join("fns.csv");
    let o = fns(&["solve", "--method", "fns", "--checkpoint", p(&ck), "--trace", p(&trace)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(value(&stdout(&o), "status"), "CONVERGED");

    let o = fns(&["solve", "--method", "fns", "--checkpoint", p(&ck), "--n", "32", "--trace", p(&trace)]);
    assert_eq!(o.status.code(), Some(1), "checkpoint problem must win over conflicting flags");

    let mag = dir.path().join("mag.csv");
    let pgm = dir.path().join("mag.pgm");
    let o = fns(&["inspect-checkpoint", p(&ck), "--magnitude-csv", p(&mag), "--magnitude-pgm", p(&pgm)]);
    assert!(o.status.success(), "{o:?}");
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["problem"]["n"], 16);
    assert_eq!(doc["bins"], 225);
    assert_eq!(std::fs::read_to_string(&mag).unwrap().lines().count(), 15);
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n15 15\n255\n"));
}

#[test]
fn bench_keeps_config_order_and_isolates_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    let config = serde_json::json!({
        "runs": [
            {"name": "cg", "problem": {"family": "poisson", "n": 16}, "solver": "cg", "num_rhs": 2},
            {"name": "bad", "problem": {"family": "convection_diffusion", "n": 16, "epsilon": 0.1}, "solver": "dst-direct"},
            {"name": "fns", "problem": {"family": "poisson", "n": 16}, "solver": "fns", "num_rhs": 2,
             "smoother": {"kind": "jacobi", "sweeps": 3},
             "train": {"epochs": 10, "batch_size": 2, "k_schedule": {"fixed": 3}}}
        ]
    });
    std::fs::write(&cfg, config.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = fns(&["bench", "--config", p(&cfg), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], BENCH_HEADER);
    assert!(lines[1].starts_with("cg,") && lines[1].contains(",OK,"));
    assert!(lines[2].starts_with("bad,") && lines[2].contains(",ERROR,"));
    assert!(lines[3].starts_with("fns,") && lines[3].contains(",OK,"), "{csv}");
    assert!(out.join("cg_trace.csv").exists());
    assert!(out.join("fns.bin").exists());
}

#[test]
fn empty_bench_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, r#"{"runs": []}"#).unwrap();
    let out = dir.path().join("out");
    let o = fns(&["bench", "--config", p(&cfg), "--out-dir", p(&out)]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv, format!("{BENCH_HEADER}\n"));
}

#[test]
fn bench_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"runs": [], "outputs": "x"}"#).unwrap();
    assert_eq!(fns(&["bench", "--config", p(&cfg)]).status.code(), Some(1));
}
