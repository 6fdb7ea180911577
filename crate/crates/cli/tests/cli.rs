use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn optdesign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optdesign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn local_design_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("local.json");
    let o = optdesign(&["local", "--model", "exp2", "--beta", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let doc = read_json(&out);
    let reparsed: Value = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(reparsed, doc);

    let v = optdesign(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["value"], doc["value"]);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = optdesign(&["bayes", "--model", "exp1", "--prior", "uniform:1:20", "--nodes", "40"]);
    let b = optdesign(&["bayes", "--model", "exp1", "--prior", "uniform:1:20", "--nodes", "40"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn perturbed_design_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("local.json");
    let o = optdesign(&["local", "--model", "exp2", "--beta", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let mut doc = read_json(&out);
    let weights = doc["design"]["weights"].as_array_mut().unwrap();
    assert_eq!(weights.len(), 2);
    let (w0, w1) = (weights[0].as_f64().unwrap(), weights[1].as_f64().unwrap());
    weights[0] = Value::from(w0 + 0.1);
    weights[1] = Value::from(w1 - 0.1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();

    let v = optdesign(&["verify", bad.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(false));
}

#[test]
fn maximin_on_short_interval_has_two_points() {
    let o = optdesign(&["maximin", "--model", "exp1", "--beta-range", "1:10", "--beta-count", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["design"]["points"].as_array().unwrap().len(), 2);
    assert_eq!(doc["certificate"]["passed"], Value::Bool(true));
}

#[test]
fn growth_csv_reports_support_counts() {
    let o = optdesign(&["growth", "--model", "exp1", "--criterion", "bayes", "--B", "10,40"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,B=10,B=40"));
    assert_eq!(lines.next(), Some("support_count,1,2"));
}

#[test]
fn curves_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.txt");
    let e = dir.path().join("e.txt");
    let o = optdesign(&[
        "bayes",
        "--model",
        "exp1",
        "--prior",
        "uniform:1:10",
        "--derivative-curve",
        d.to_str().unwrap(),
        "--efficiency-curve",
        e.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let max_d = fs::read_to_string(&d)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((max_d - 1.0).abs() < 1e-6, "max d = {max_d}");
    assert!(fs::read_to_string(&e).unwrap().lines().count() > 1);
}

#[test]
fn theory_q_decay_passes() {
    let o = optdesign(&["theory", "--check", "q-decay", "--model", "exp1", "--samples", "40"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["violations"], Value::from(0));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(optdesign(&["local", "--bogus"]).status.code(), Some(2));
    assert_eq!(optdesign(&["local", "--model", "nope", "--beta", "1"]).status.code(), Some(2));
    assert_eq!(optdesign(&["maximin", "--model", "exp1", "--beta-range", "5:1"]).status.code(), Some(2));
    assert_eq!(optdesign(&["bayes", "--model", "exp1", "--prior", "gamma:1"]).status.code(), Some(2));
    assert_eq!(
        optdesign(&["local", "--model", "exp1", "--beta", "1", "--efficiency-curve", "/tmp/x"]).status.code(),
        Some(2)
    );
}
