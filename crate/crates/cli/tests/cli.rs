use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SINGLE_LINK: &str = r#"{
    "network": {"nodes": 2, "links": [[0, 1]],
                "sources": [{"node": 0, "destination": 1}],
                "routes": [{"destination": 1, "next_hops": [[0, 1]]}]},
    "traffic": {"arrival_law": "bernoulli",
                "file_types": [{"eta": 0.5}],
                "sources": [{"type_probs": [1.0]}],
                "capacity": {"mix": [{"links": [[0, 1]], "weight": 1.0}], "theta": 0.6},
                "window": {"policy": {"fixed": 2}, "w_cong": 4, "initial": 2}},
    "scheduler": {"kind": "centralized", "weight_fn": {"h": "loglog"}},
    "engine": {"slots": 10000, "seed": 5},
    "analysis": {"frozen_weights": [0.7]}
}"#;

fn flowsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsched")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn run_writes_one_row_per_slot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SINGLE_LINK);
    let out = dir.path().join("out");
    let o = flowsched(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "slot,total_files,total_q,V,sched_weight,oracle_weight,asserts_ok,delivered");
    assert_eq!(lines.count(), 10_000);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["version"], 1);
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["replicas"][0]["verdict"]["tag"], "stable");
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SINGLE_LINK.replace("centralized", "qcsma"));
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = flowsched(&["run", "--config", &cfg, "--slots", "3000", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        csvs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let out = dir.path().join("c");
    assert_eq!(code(&flowsched(&["run", "--config", &cfg, "--slots", "3000", "--seed", "6", "--out", out.to_str().unwrap()])), 0);
    assert_ne!(fs::read(out.join("metrics.csv")).unwrap(), csvs[0]);
}

#[test]
fn replicas_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SINGLE_LINK);
    let out = dir.path().join("out");
    let o = flowsched(&["run", "--config", &cfg, "--slots", "500", "--replicas", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for seed in 5..8 {
        assert!(out.join(format!("seed-{seed}/metrics.csv")).exists());
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = write(dir.path(), "t.json", &SINGLE_LINK.replace("\"theta\": 0.6", "\"theta\": \"high\""));
    let o = flowsched(&["run", "--config", &text, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    let bad_h = write(dir.path(), "h.json", &SINGLE_LINK.replace(r#"{"h": "loglog"}"#, r#"{"h": "logtheta", "theta": 1.5}"#));
    assert_eq!(code(&flowsched(&["run", "--config", &bad_h, "--out", dir.path().to_str().unwrap()])), 2);

    let unknown = write(dir.path(), "u.json", &SINGLE_LINK.replace("\"seed\": 5", "\"seed\": 5, \"sed\": 1"));
    assert_eq!(code(&flowsched(&["run", "--config", &unknown, "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn missing_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&flowsched(&["run", "--config", missing.to_str().unwrap()])), 4);
}

#[test]
fn verify_suites() {
    let o = flowsched(&["verify", "oracles"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["suite"], "oracles");
    assert_eq!(report["passed"], true);
    assert_eq!(code(&flowsched(&["verify", "--suite", "bogus"])), 2);
}

#[test]
fn sweep_over_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SINGLE_LINK);
    let grid = write(dir.path(), "g.json", r#"{"theta": [0.5, 0.8, 0.95, 1.2]}"#);
    let out = dir.path().join("sweep");
    let o = flowsched(&["sweep", "--config", &cfg, "--grid", &grid, "--slots", "200000", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let verdicts: Vec<&str> = rows.iter().map(|r| r[6]).collect();
    assert_eq!(verdicts, ["stable", "stable", "stable", "unstable"], "{csv}");
    let files: Vec<f64> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    assert!(files[0] < files[1] && files[1] < files[2], "{files:?}");

    let empty = write(dir.path(), "e.json", "{}");
    assert_eq!(code(&flowsched(&["sweep", "--config", &cfg, "--grid", &empty, "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn sample_csma_matches_gibbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SINGLE_LINK.replace("\"slots\": 10000", "\"slots\": 400000"));
    let out = dir.path().join("s");
    let o = flowsched(&["sample-csma", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["verdict"], "pass");
    let csv = fs::read_to_string(out.join("occupancy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
