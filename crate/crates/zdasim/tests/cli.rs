use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn zdasim(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zdasim"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, body).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_defense_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["check-defense"], &example("complete3.json"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = zdasim(&["check-defense"], &example("path16.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(zdasim(&["check-defense"], &example("detection.json"), tmp.path()).status.code(), Some(0));
}

#[test]
fn synthesize_reports_resistant_network() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["synthesize"], &example("path16.json"), tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let out = zdasim(&["synthesize"], &example("stealth.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let policy = read_json(tmp.path().join("stealth_policy.json"));
    assert!(!policy["entries"].as_array().unwrap().is_empty());
}

#[test]
fn empty_attacker_set_is_resistant() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
  "system": {
    "topologies": [{ "id": 1, "family": "experiment-1" }],
    "schedule": { "sequence": [[1, 2.0]] },
    "monitored": [1, 2, 3]
  },
  "attack": { "mode": "intermittent-zda", "misbehaving": [], "inference_delay": 0.1, "pause_lead": 0.1 }
}"#,
    );
    assert_eq!(zdasim(&["synthesize"], &cfg, tmp.path()).status.code(), Some(3));
}

#[test]
fn malformed_config_reports_position() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"sim\": { \"dt\": 0.01 }\n}\n");
    let out = zdasim(&["simulate"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("system"), "{err}");
    assert!(err.contains("scenario.json:3:1:"), "{err}");

    let cfg = write_config(
        tmp.path(),
        r#"{
  "system": {
    "topologies": [{ "id": 1, "family": "path", "n": 3 }],
    "schedule": { "sequence": [[1, 1.0]] },
    "monitored": [1]
  },
  "colour": 1
}"#,
    );
    let out = zdasim(&["simulate"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn bad_flag_is_an_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_zdasim")).args(["simulate", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stealth_run_stays_hidden_while_spread_grows() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["simulate"], &example("stealth.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = read_json(tmp.path().join("stealth_verdict.json"));
    assert_eq!(verdict["detected"], Value::Bool(false));
    assert!(verdict["peak_residual"].as_f64().unwrap() < 1e-6);
    assert!(verdict["final_position_spread"].as_f64().unwrap() > 10.0);
}

#[test]
fn detection_run_flags_the_attack() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["simulate"], &example("detection.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let verdict = report(&out);
    assert_eq!(verdict["detected"], Value::Bool(true));
    assert!(verdict["first_detection_time"].as_f64().is_some());
}

#[test]
fn attack_free_run_reaches_consensus() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["simulate"], &example("consensus.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let verdict = read_json(tmp.path().join("consensus_verdict.json"));
    assert!(verdict["final_position_spread"].as_f64().unwrap() < 1e-6);
    assert!(verdict["final_max_speed"].as_f64().unwrap() < 1e-6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        assert_eq!(zdasim(&["simulate", "--seed", "3"], &example("consensus.json"), dir.path()).status.code(), Some(0));
    }
    let read = |d: &TempDir| fs::read(d.path().join("consensus_trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let csv = String::from_utf8(read(&a)).unwrap();
    assert!(csv.starts_with("t,x_1,"));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["sweep", "--horizon", "6"], &example("stealth.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = read_json(example("stealth.json"));
    let sweep = &cfg["sweep"];
    let points: usize = ["inference_delay", "pause_lead", "threshold"]
        .iter()
        .map(|k| sweep[k].as_array().map_or(1, |v| v.len().max(1)))
        .product();
    let csv = fs::read_to_string(tmp.path().join("stealth_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), points + 1);
    assert!(csv.lines().skip(1).all(|l| !l.contains("error")));
}

#[test]
fn classify_reports_detectability() {
    let tmp = TempDir::new().unwrap();
    let out = zdasim(&["classify"], &example("detection.json"), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["detectable"], Value::Bool(true));
}
