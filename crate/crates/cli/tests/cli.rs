//! End-to-end runs of the `pivotal` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pivotal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pivotal")).args(args).env_remove("PIVOTAL_THREADS").output().expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pivot_value_on_small_normal_sample() {
    let dir = TempDir::new().unwrap();
    let y = write(dir.path(), "y.csv", "y\n1\n2\n3\n");
    let r = json_stdout(&pivotal(&["pivot", "--model", "normal-mv", "--data", s(&y), "--psi0", "0", "--pivot", "r", "--seed", "11"]));
    let row = &r["results"]["pivots"][0];
    assert_eq!(row["kind"], "r");
    assert!((row["value"].as_f64().unwrap() - 2.4161).abs() < 1e-4, "{row}");
    let cf = row["cf_pvalue"].as_f64().unwrap();
    let boot = row["bootstrap"]["p_value"].as_f64().unwrap();
    assert!(cf > 0.0 && cf < 0.05 && boot > 0.0 && boot < 0.1, "cf {cf}, bootstrap {boot}");
    for key in ["config", "results", "diagnostics", "seeds", "version"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["config"]["model"]["family"], "normal-mv");
    assert_eq!(r["seeds"]["master"], 11);
}

#[test]
fn equivalence_of_r_and_wo_on_normal() {
    let r = json_stdout(&pivotal(&["equiv-check", "--pair", "r,wo", "--model", "normal-mv", "--theta", "0,1", "--n", "50"]));
    assert_eq!(r["results"]["pass"], true);
    let conds = r["results"]["conditions"].as_array().unwrap();
    assert_eq!(conds.len(), 2);
    assert!(conds.iter().all(|c| c["pass"] == true));
}

#[test]
fn equivalence_of_r_and_se_fails_on_gamma() {
    let r = json_stdout(&pivotal(&["equiv-check", "--pair", "r,se", "--model", "gamma", "--theta", "2,1", "--n", "30"]));
    assert_eq!(r["results"]["pass"], false);
}

#[test]
fn fit_exponential_rate() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.csv", "x\n0.2\n0.8\n0.5\n0.4\n0.6\n");
    let r = json_stdout(&pivotal(&["fit", "--model", "exponential", "--data", s(&x)]));
    let th = r["results"]["theta_hat"][0].as_f64().unwrap();
    assert!((th - 2.0).abs() < 1e-10, "{th}");
}

#[test]
fn stability_check_separates_observed_and_expected_information() {
    let r = json_stdout(&pivotal(&["stability-check", "--model", "gamma", "--theta", "2,1", "--n", "20", "--pivot", "r,wo,we"]));
    let pass: Vec<bool> = r["results"]["kinds"].as_array().unwrap().iter().map(|k| k["report"]["pass"].as_bool().unwrap()).collect();
    assert_eq!(pass, vec![true, true, false]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": "gamma", "theta": [2.0, 1.0], "n": 30, "pair": ["r", "se"]}"#);
    let r = json_stdout(&pivotal(&["equiv-check", "--config", s(&cfg), "--pair", "r,wo"]));
    assert_eq!(r["config"]["pair"], serde_json::json!(["r", "wo"]));
    assert_eq!(r["config"]["model"]["family"], "gamma");
    assert_eq!(r["results"]["pass"], true);
}

#[test]
fn simulated_data_needs_a_seed() {
    let args = ["fit", "--model", "exponential", "--simulate-theta", "2", "--simulate-n", "40"];
    assert_eq!(pivotal(&args).status.code(), Some(2));
    let mut with_seed = args.to_vec();
    with_seed.extend(["--seed", "3"]);
    let r = json_stdout(&pivotal(&with_seed));
    assert_eq!(r["results"]["n"], 40);
    assert!(r["seeds"]["data"].is_u64());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let y = write(dir.path(), "y.csv", "y\n1\n2\n3\n");
    let cases: Vec<Vec<&str>> = vec![
        vec!["no-such-command"],
        vec!["pivot", "--model", "normal-mv", "--data", s(&y), "--psi0", "0"],
        vec!["pivot", "--model", "normal-mv", "--data", s(&y), "--psi0", "0", "--pivot", "zz", "--seed", "1"],
        vec!["fit", "--model", "weibull", "--data", s(&y)],
        vec!["fit", "--model", "normal-mv", "--data", s(&y), "--simulate-theta", "0,1", "--simulate-n", "5", "--seed", "1"],
        vec!["equiv-check", "--pair", "r", "--model", "normal-mv", "--theta", "0,1", "--n", "50"],
        vec!["fit", "--model", "normal-mv", "--data", "/nonexistent/y.csv"],
    ];
    for args in cases {
        let out = pivotal(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn schema_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": "normal-mv", "pivots": ["r", "zz"], "psi0": 0, "seed": 1}"#);
    let y = write(dir.path(), "y.csv", "y\n1\n2\n3\n");
    let out = pivotal(&["pivot", "--config", s(&cfg), "--data", s(&y)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pivots[1]"));
    let cfg = write(dir.path(), "d.json", r#"{"model": "normal-mv", "sed": 1}"#);
    let out = pivotal(&["fit", "--config", s(&cfg), "--data", s(&y)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.csv", "x\n0.2\n0.8\n0.5\n");
    let out = pivotal(&["pivot", "--model", "exponential", "--data", s(&x), "--psi0", "1e-300", "--bootstrap-reps", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let base = ["verify-order", "--model", "gamma", "--theta", "2,1", "--n-grid", "10,20,40", "--outer", "200", "--pair", "r,wo", "--seed", "5"];
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("r{threads}.json"));
        let csv = dir.path().join(format!("r{threads}.csv"));
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out", s(&out), "--csv", s(&csv)]);
        let o = pivotal(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join(format!("r{threads}.json.meta.json"))).unwrap()).unwrap();
        assert_eq!(meta["threads"].as_u64(), Some(threads.parse().unwrap()));
        let table = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(table.lines().count(), 4);
        assert!(table.starts_with("series,n,metric,metric_se,count,failed"));
        reports.push((std::fs::read(&out).unwrap(), table));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn thread_cap_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let o = Command::new(env!("CARGO_BIN_EXE_pivotal"))
        .args(["equiv-check", "--pair", "r,wo", "--model", "normal-mv", "--theta", "0,1", "--n", "50", "--out", s(&out)])
        .env("PIVOTAL_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["threads"], 2);
}

#[test]
fn bartlett_on_gaussian_means() {
    let r = json_stdout(&pivotal(&["bartlett", "--model", "normal-mean3", "--theta", "0,1,-1", "--n", "8", "--reps", "2000", "--seed", "9"]));
    let f = &r["results"]["factor"];
    assert_eq!(r["results"]["q"], 3);
    assert!((f["factor"].as_f64().unwrap() - 1.0).abs() <= 4.0 * f["mc_se"].as_f64().unwrap(), "{f}");
}
