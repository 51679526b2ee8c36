use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use freebound::cli::config::Pipeline;
use freebound::cli::record::RunRecord;
use freebound::cli::run_value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn freebound(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_freebound")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn obstacle(expected_exponent: f64) -> Value {
    json!({
        "name": "obstacle_probe",
        "potential": {"family": "obstacle"},
        "grid": {"dim": 1, "m": 9, "lo": [0.0], "hi": [1.0]},
        "boundary": {"kind": "affine", "value": 0.125, "gradient": [-0.125]},
        "params": {"tau": 1e-10, "expected_exponent": expected_exponent, "exponent_tolerance": 0.1}
    })
}

#[test]
fn solve_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("obstacle_1d.json");
    let out = freebound(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
    for name in ["config.json", "run.json", "report.json", "field.csv", "energy.csv"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let rec: RunRecord = serde_json::from_value(read_json(&dir.path().join("run.json"))).unwrap();
    assert_eq!(rec.pipeline, "solve");
    assert!(rec.passed());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["config_hash"], Value::from(rec.config_hash.clone()));
}

#[test]
fn failed_assertion_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wrong.json");
    std::fs::write(&cfg, obstacle(1.0).to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = freebound(&["estimate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL growth_exponent"));
    let rec: RunRecord = serde_json::from_value(read_json(&out_dir.join("run.json"))).unwrap();
    assert!(!rec.passed());
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let mut v = obstacle(2.0);
    v["params"]["no_such_knob"] = json!(1);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = freebound(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_knob"));

    let missing = freebound(&["solve", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let usage = freebound(&["solve"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn too_fine_grid_is_a_config_error() {
    let mut v = obstacle(2.0);
    v["grid"]["m"] = json!(15);
    let dir = tempfile::tempdir().unwrap();
    assert!(run_value(Pipeline::Solve, v, dir.path(), Some(dir.path()), None).is_err());
}

#[test]
fn seed_override_enters_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let v = obstacle(2.0);
    let a = run_value(Pipeline::Solve, v.clone(), dir.path(), Some(&dir.path().join("a")), Some(3)).unwrap();
    let b = run_value(Pipeline::Solve, v.clone(), dir.path(), Some(&dir.path().join("b")), Some(4)).unwrap();
    let c = run_value(Pipeline::Solve, v, dir.path(), Some(&dir.path().join("c")), Some(3)).unwrap();
    assert_eq!((a.seed, b.seed), (Some(3), Some(4)));
    assert_ne!(a.config_hash, b.config_hash);
    assert_eq!(a.config_hash, c.config_hash);
    assert_eq!(read_json(&dir.path().join("a/config.json"))["seed"], json!(3));
    let field_a = std::fs::read(dir.path().join("a/field.csv")).unwrap();
    let field_c = std::fs::read(dir.path().join("c/field.csv")).unwrap();
    assert_eq!(field_a, field_c);
}

#[test]
fn output_dir_from_config_is_used_without_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = obstacle(2.0);
    let target = dir.path().join("from_config");
    v["output_dir"] = json!(target);
    let hashed_without = run_value(Pipeline::Solve, obstacle(2.0), dir.path(), Some(&dir.path().join("x")), None)
        .unwrap()
        .config_hash;
    let rec = run_value(Pipeline::Solve, v, dir.path(), None, None).unwrap();
    assert!(target.join("run.json").is_file());
    assert_eq!(rec.config_hash, hashed_without);
}

#[test]
fn modulus_pipeline_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("modulus_power.json");
    let out = freebound(&["modulus", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(table.starts_with("k,mu,a,branch"), "{table}");
    assert!(dir.path().join("omega.csv").is_file());
}

#[test]
fn sweep_runs_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("sweep_gamma.json");
    let out = freebound(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4, "{summary}");
    assert_eq!(
        lines[0],
        "run,potential.params.gamma,status,fitted_exponent,fitted_constant,lipschitz_constant,c1_constant,log_lip_seminorm,calibrated_delta,error"
    );
    assert!(lines[1..].iter().all(|l| l.contains(",pass,")), "{summary}");
    for i in 0..3 {
        assert!(dir.path().join(format!("sweep_gamma_{i:03}/run.json")).is_file());
    }
}

#[test]
fn nested_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = obstacle(2.0);
    v["params"]["sweep"] = json!([{"path": "params.tau", "values": [1e-10]}]);
    v["params"]["sweep_pipeline"] = json!("sweep");
    let rec = run_value(Pipeline::Sweep, v, dir.path(), Some(dir.path()), None).unwrap();
    assert!(rec.error.unwrap().contains("nest"));
}

#[test]
fn power_modulus_table_has_constant_mu() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "name": "power_half",
        "grid": {"dim": 1, "m": 4, "lo": [0.0], "hi": [1.0]},
        "params": {"modulus": {"kind": "power", "gamma": 0.5, "amplitude": 0.1}, "delta": 0.1, "depth": 100}
    });
    let rec = run_value(Pipeline::Modulus, v, dir.path(), Some(dir.path()), None).unwrap();
    assert!(rec.passed());
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let target = (-1.0f64 / 3.0).exp2();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    for row in rows {
        let mu: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((mu - target).abs() < 1e-12, "{row}");
    }
}

#[test]
fn zero_potential_solve_is_affine() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "name": "zero_affine",
        "potential": {"family": "zero"},
        "grid": {"dim": 1, "m": 8, "lo": [-1.0], "hi": [1.0]},
        "boundary": {"kind": "affine", "value": 0.25, "gradient": [0.5]}
    });
    let rec = run_value(Pipeline::Solve, v, dir.path(), Some(dir.path()), None).unwrap();
    assert!(rec.passed());
    let text = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    let u = freebound::ScalarField::from_csv(text.as_bytes()).unwrap();
    for (idx, v) in u.values.iter().enumerate() {
        let x = u.grid.coord(idx)[0];
        assert!((v - (0.25 + 0.5 * x)).abs() < 1e-8, "u({x}) = {v}");
    }
}

#[test]
fn declared_pipeline_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = obstacle(2.0);
    v["pipeline"] = json!("modulus");
    let err = run_value(Pipeline::Solve, v.clone(), dir.path(), Some(dir.path()), None).unwrap_err();
    assert!(err.to_string().contains("modulus"));
    v["pipeline"] = json!("solve");
    assert!(run_value(Pipeline::Solve, v, dir.path(), Some(dir.path()), None).unwrap().passed());
}

#[test]
fn calibrated_delta_feeds_the_c1_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("calibrated_c1_1d.json");
    let out = freebound(&["estimate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rec: RunRecord = serde_json::from_value(read_json(&dir.path().join("run.json"))).unwrap();
    let delta = rec.metrics["calibrated_delta"];
    assert!(delta > 0.0 && delta <= 1.0);
    assert!(rec.metrics["c1_constant"].is_finite());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["calibration"]["samples"], json!(20));
}
