use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpse::oracle::DiscreteLaw;
use mpse_cli::commands::OracleFixture;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn mpse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpse")).args(args).output().expect("spawn mpse")
}

/// The bundled panel config with a fast learner and an absolute input path.
fn fast_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(fixtures().join("nlsy_like.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["input"] = Value::String(fixtures().join("nlsy_like.csv").display().to_string());
    cfg["learner"] = serde_json::json!({ "kind": "ols" });
    cfg["bootstrap"] = Value::from(100);
    let path = dir.join("fast.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.lines().next().expect("stderr line")).expect("JSON error on stderr")
}

#[test]
fn decompose_both_methods_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let out = dir.path().join("report.json");
    let o = mpse(&["decompose", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let methods: Vec<&str> = r["estimates"].as_array().unwrap().iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["dml", "rwr"]);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    assert_eq!(r["config"]["bootstrap"], 100);
    assert_eq!(r["config"]["folds"], 5);
}

#[test]
fn decompose_is_byte_identical_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let run = || {
        let o = mpse(&["decompose", "--config", cfg.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success());
        o.stdout
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

fn write_csv(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("data.csv");
    std::fs::write(&p, body).unwrap();
    let cfg = serde_json::json!({
        "input": p,
        "schema": {
            "treatment_column": "a",
            "mediator_columns": ["m1"],
            "baseline_columns": ["x"],
            "z_block_columns": [[]],
            "outcome_column": "y"
        },
        "learner": { "kind": "ols" },
        "folds": 2,
        "bootstrap": 100
    });
    let c = dir.join("cfg.json");
    std::fs::write(&c, cfg.to_string()).unwrap();
    c
}

#[test]
fn monotone_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("a,m1,x,y\n");
    for i in 0..40 {
        body += &format!("{},{},{},{}\n", i % 2, (i % 4 == 1) as u8, i, i as f64 * 0.1);
    }
    body += "0,1,3,1.0\n";
    let cfg = write_csv(dir.path(), &body);
    let o = mpse(&["decompose", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "monotonicity");
    assert_eq!(e["units"], serde_json::json!([40]));
}

#[test]
fn empty_stratum_is_a_positivity_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("a,m1,x,y\n");
    for i in 0..60 {
        let a = i % 2;
        body += &format!("{a},{a},{},{}\n", i % 7, i as f64 * 0.1);
    }
    let cfg = write_csv(dir.path(), &body);
    for method in ["dml", "rwr"] {
        let o = mpse(&["decompose", "--config", cfg.to_str().unwrap(), "--method", method]);
        assert_eq!(o.status.code(), Some(3), "{method}");
        assert_eq!(stderr_json(&o)["error"], "positivity");
    }
}

#[test]
fn missing_schema_is_a_validation_error() {
    let o = mpse(&["decompose", "--input", fixtures().join("nlsy_like.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "invalid_argument");
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let stem = dir.join(name);
    let mut args = vec![
        "simulate",
        "--reps",
        "2",
        "--folds",
        "2",
        "--seed",
        "5",
        "--output",
        stem.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    mpse(&args)
}

#[test]
fn simulate_smoke_run_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(
        &cfg,
        r#"{"learner": {"kind": "ols"}, "simulate": {"rwr_bootstrap": 100, "mc_size": 10000}}"#,
    )
    .unwrap();
    let start = std::time::Instant::now();
    let o = simulate(dir.path(), "a", &["--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);
    assert!(csv.starts_with("estimator,n,features,bias,rmse,coverage"));
    let j: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(j["config"]["simulate"]["reps"], 2);
    let o = simulate(dir.path(), "b", &["--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
}

#[test]
fn simulate_rejects_small_n() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "x", &["--n-grid", "40,250"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("40"));
}

fn read_contour(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn sensitivity_grid_with_fixed_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    std::fs::write(&cfg, r#"{"sensitivity": {"estimate": 0.3, "resolution": [10, 10]}}"#).unwrap();
    let out = dir.path().join("grid.csv");
    let o = mpse(&["sensitivity", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_contour(&out);
    assert_eq!(rows[0], ["alpha", "beta", "adjusted", "point"]);
    let grid: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[3] == "grid").collect();
    assert_eq!(grid.len(), 100);
    let origin = grid.iter().find(|r| r[0] == "0" && r[1] == "0").unwrap();
    assert_eq!(origin[2].parse::<f64>().unwrap(), 0.3);
}

#[test]
fn sensitivity_benchmark_from_data() {
    let dir = tempfile::tempdir().unwrap();
    let base: Value = serde_json::from_str(&std::fs::read_to_string(fast_config(dir.path())).unwrap()).unwrap();
    let mut cfg = base.clone();
    cfg["sensitivity"] = serde_json::json!({ "target": "delta", "k": 1, "benchmarks": ["ability"] });
    let path = dir.path().join("s.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("grid.csv");
    let o = mpse(&["sensitivity", "--config", path.to_str().unwrap(), "--method", "rwr", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_contour(&out);
    assert_eq!(rows[0].last().unwrap(), "benchmark");
    assert!(rows.iter().any(|r| r[3] == "benchmark" && r[4] == "ability"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary["target"]["kind"], "delta");
    assert!(summary["estimate"].as_f64().unwrap().is_finite());
}

#[test]
fn oracle_check_bundled_fixture_passes() {
    let o = mpse(&["oracle-check", "--input", fixtures().join("oracle_law.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

fn corrupted(dir: &Path, edit: impl FnOnce(&mut OracleFixture)) -> PathBuf {
    let text = std::fs::read_to_string(fixtures().join("oracle_law.json")).unwrap();
    let mut fx: OracleFixture = serde_json::from_str(&text).unwrap();
    edit(&mut fx);
    let p = dir.join("bad.json");
    std::fs::write(&p, serde_json::to_string(&fx).unwrap()).unwrap();
    p
}

#[test]
fn oracle_check_names_corrupted_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = corrupted(dir.path(), |fx| fx.psi[1][0] += 1e-6);
    let o = mpse(&["oracle-check", "--input", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("FAIL fixture_values"));
    assert!(text.contains("PASS recursion_vs_enumeration"));
}

#[test]
fn oracle_check_exit_code_is_worst_status() {
    let dir = tempfile::tempdir().unwrap();
    let p = corrupted(dir.path(), |fx| {
        fx.law.a_prob[0] = 1.0;
        fx.psi[0][0] += 1.0;
    });
    let o = mpse(&["oracle-check", "--input", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL law_valid"));
}

#[test]
fn bundled_oracle_fixture_matches_enumeration() {
    let text = std::fs::read_to_string(fixtures().join("oracle_law.json")).unwrap();
    let fx: OracleFixture = serde_json::from_str(&text).unwrap();
    assert_eq!(fx.law, DiscreteLaw::random(2, 2, &[2, 2], 20).unwrap());
    let fresh = OracleFixture::from_law(fx.law.clone()).unwrap();
    for (a, b) in fx.psi.iter().flatten().zip(fresh.psi.iter().flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in fx.phi.iter().zip(&fresh.phi) {
        assert!((a - b).abs() < 1e-15);
    }
}
