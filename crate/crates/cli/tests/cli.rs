use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn set(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_set"))
        .args(args)
        .env_remove("SET_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--dim",
        "2",
        "--n",
        "64",
        "--p",
        "1",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    set(&args)
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = String::from_utf8(read(dir.path(), "trace.csv")).unwrap();
    assert!(trace.starts_with("k,tau,ess,rho,acceptance,solves\n"));
    let summary: serde_json::Value = serde_json::from_slice(&read(dir.path(), "summary.json")).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["reference"]["kind"], "analytic");
    let taus = summary["temperatures"].as_array().unwrap();
    assert_eq!(taus.last().unwrap().as_f64(), Some(1.0));
    let ensemble = String::from_utf8(read(dir.path(), "ensemble.csv")).unwrap();
    assert_eq!(ensemble.lines().count(), 65);
}

#[test]
fn invalid_xi_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &["--xi", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("xi must lie in (0,1)"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"n": 32, "temperature": 2}"#).unwrap();
    let o = small_run(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn missing_fixture_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(
        dir.path(),
        &["--model", "pde", "--fixture", dir.path().join("nope").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn reruns_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run(a.path(), &["--threads", "1"]).status.success());
    assert!(small_run(b.path(), &["--threads", "2", "--method", "set"])
        .status
        .success());
    for f in ["trace.csv", "ensemble.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run(a.path(), &["--method", "smc", "--scheme", "stratified"])
        .status
        .success());
    let summary: serde_json::Value = serde_json::from_slice(&read(a.path(), "summary.json")).unwrap();
    let cfg = b.path().join("echo.json");
    fs::write(&cfg, serde_json::to_string(&summary["config"]).unwrap()).unwrap();
    let o = set(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "ensemble.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let again: serde_json::Value = serde_json::from_slice(&read(b.path(), "summary.json")).unwrap();
    assert_eq!(again["metrics"], summary["metrics"]);
}

#[test]
fn output_directory_precedence() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let base = ["run", "--dim", "2", "--n", "16", "--p", "0"];
    let o = Command::new(env!("CARGO_BIN_EXE_set"))
        .args(base)
        .env("SET_OUTPUT_DIR", env_dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_dir.path().join("trace.csv").exists());
    let mut args = base.to_vec();
    args.extend(["--out", flag_dir.path().to_str().unwrap()]);
    let o = Command::new(env!("CARGO_BIN_EXE_set"))
        .args(&args)
        .env("SET_OUTPUT_DIR", env_dir.path().join("unused"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_dir.path().join("trace.csv").exists());
    assert!(!env_dir.path().join("unused").exists());
}

#[test]
fn compare_and_oracle_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = set(&[
        "compare", "--dim", "2", "--ns", "32,64", "--ps", "0", "--n-runs", "2", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(dir.path(), "compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("method,N,p,n_runs,rmse_mean_avg,rmse_mean_std,R_avg,R_std,K_avg,solves_avg")
    );
    assert_eq!(lines.count(), 4);

    let o = set(&[
        "oracle",
        "--dim",
        "2",
        "--chain-length",
        "10000",
        "--seed",
        "5",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&read(dir.path(), "moments.json")).unwrap();
    assert_eq!(m["provenance"]["kind"], "mcmc");
    assert_eq!(m["provenance"]["seed"], 5);

    let o = set(&[
        "run",
        "--dim",
        "2",
        "--n",
        "32",
        "--reference",
        dir.path().join("moments.json").to_str().unwrap(),
        "--out",
        out,
    ]);
    assert!(o.status.success());
    let o = set(&[
        "run",
        "--dim",
        "3",
        "--n",
        "32",
        "--reference",
        dir.path().join("moments.json").to_str().unwrap(),
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixture_command_matches_committed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = set(&["fixture", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/elliptic_default");
    for f in ["manifest.json", "observations.csv", "true_field.csv"] {
        assert_eq!(read(dir.path(), f), read(&committed, f), "{f}");
    }
}
