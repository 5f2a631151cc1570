use std::process::{Command, Output};

use serde_json::Value;

fn gwmaps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwmaps")).args(args).env("RUST_BACKTRACE", "0").output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = gwmaps(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn analyze_reports_uipm_as_regular_critical() {
    let v = json(&["analyze", "uipm"]);
    assert_eq!(v["classification"], "regular_critical");
    assert!((v["zplus"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-8);
}

#[test]
fn inline_weights_are_accepted() {
    let v = json(&["analyze", r#"{"table": {"4": 0.125}}"#]);
    assert_eq!(v["classification"], "not_admissible");
}

#[test]
fn off_lattice_sizes_are_rejected_before_sampling() {
    let out = gwmaps(&["sample", "tree", "toy2", "--size", "10", "--gamma", "1,0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lattice"));
}

#[test]
fn output_depends_on_seed_only() {
    let args = ["sample", "ball", "even-2", "--count", "20", "--seed", "7"];
    let a = gwmaps(&args);
    let b = gwmaps(&[&args[..], &["--threads", "1"]].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = gwmaps(&["sample", "ball", "even-2", "--count", "20", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn enumeration_counts_quadrangulation_mobiles() {
    let v = json(&["enumerate", r#"{"table": {"4": 1.0}}"#, "--max-faces", "2"]);
    assert_eq!(v["by_faces"], serde_json::json!({"0": 1, "1": 3, "2": 18}));
    assert_eq!(v["injective"], true);
}

#[test]
fn csv_and_config_file() {
    let out = gwmaps(&["period", "--law", "mono2", "--gamma", "1", "--format", "csv"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "type,d,alpha\n1,2,1\n");

    let dir = std::env::temp_dir().join(format!("gwmaps-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.json");
    let report = dir.join("out.json");
    std::fs::write(&cfg, r#"{"seed": 3, "command": {"period": {"law": "toy2", "gamma": "1,0"}}}"#).unwrap();
    let out = gwmaps(&["--config", cfg.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["d"], 2);
    std::fs::remove_dir_all(&dir).ok();
}
