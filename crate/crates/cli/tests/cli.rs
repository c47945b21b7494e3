use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use irs_mec::ScenarioConfig;
use serde_json::Value;

fn irs_mec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs-mec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ScenarioConfig::default();
    cfg.elements_per_irs = 3;
    cfg.solver.num_draws = 50;
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json_string().unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("an error line")).expect("error line is json")
}

#[test]
fn defaults_round_trip() {
    let out = irs_mec(&["defaults"]);
    assert!(out.status.success());
    let cfg = ScenarioConfig::from_json_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
}

#[test]
fn solve_prints_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let trace = dir.path().join("trace.csv");
    let out = irs_mec(&[
        "solve",
        "--config",
        &config,
        "--scheme",
        "sca",
        "--seed",
        "3",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scheme"], "sca");
    assert_eq!(summary["seed"], 3);
    let t = summary["t_ms"].as_f64().unwrap();
    let per_wd: Vec<f64> = summary["per_wd_latency_ms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(per_wd.len(), 2);
    assert_eq!(per_wd.iter().copied().fold(0.0, f64::max), t);
    assert_eq!(summary["theta"].as_array().unwrap().len(), 6);

    let csv = fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("l4,t_step2,t_step3,eps4,scheme,wall_ms"));
    assert_eq!(lines.count() as u64, summary["iters"].as_u64().unwrap());
}

#[test]
fn sweep_writes_named_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"param": "edge_cpu", "values": [2e10, 4e10], "schemes": ["no_irs"], "seeds": 1}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = irs_mec(&[
        "sweep",
        "--spec",
        spec.to_str().unwrap(),
        "--config",
        &config,
        "--schemes",
        "no_irs,random_phase",
        "--seeds",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rows"], 8);

    let csv = fs::read_to_string(out_dir.join("edge_cpu.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "sweep_param,value,scheme,seed,t_ms,per_wd_latency_ms,ell_bits,fe_cycles,iters,wall_ms"
    );
    assert_eq!(lines.len(), 9);
    // wall time is off unless requested
    assert!(lines[1..].iter().all(|l| l.ends_with(',')));
}

#[test]
fn malformed_config_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    let out = irs_mec(&["solve", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(stderr_json(&out)["kind"], "json");
}

#[test]
fn invalid_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("neg.json");
    fs::write(&path, r#"{"transmit_power_mw": -1.0}"#).unwrap();
    let out = irs_mec(&["solve", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "invalid_config");
    assert!(err["error"].as_str().unwrap().contains("transmit_power_mw"));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = irs_mec(&["sweep", "--spec", "/nonexistent/spec.json"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["kind"], "io");
}
