//! End-to-end runs of the `ldsda` binary.

use std::fs;
use std::process::Command;

use serde_json::Value;

fn ldsda() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldsda"))
}

#[test]
fn three_stage_run_writes_result_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let trace = dir.path().join("trace.csv");
    let status = ldsda()
        .args(["--problem", "three-stage", "--method", "ldsda-l2", "--nfe", "6", "--start", "1,1,1"])
        .arg("--out")
        .arg(&out)
        .arg("--trace")
        .arg(&trace)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["spec"]["problem"], "three-stage");
    assert_eq!(doc["spec"]["scheme"]["elements_per_stage"], 6);
    assert!(doc["objective"].as_f64().unwrap() < -9.0);
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn multi_stage_enumeration_counts_feasible_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let status = ldsda()
        .args(["--problem", "multi-stage", "--stages", "4", "--method", "enumerate", "--nfe", "4"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["subproblems"], 7);
}

#[test]
fn invalid_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let status = ldsda()
        .args(["--problem", "three-stage", "--stages", "4"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    assert!(!out.exists());

    let status = ldsda().args(["--problem", "three-stage", "--method", "bogus"]).status().unwrap();
    assert!(!status.success());
}
