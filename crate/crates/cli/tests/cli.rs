use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ssfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssfg")).args(args).output().expect("binary runs")
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn gen_small(dir: &Path) -> String {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"kind": "sbm_node", "num_graphs": 16, "nodes_min": 12, "nodes_max": 16, "communities": 3, "seed": 5}"#,
    )
    .unwrap();
    let data = dir.join("data.json");
    let out = ssfg(&["gen-data", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.to_str().unwrap().to_string()
}

fn write_config(dir: &Path, data: &str) -> String {
    let cfg = dir.join("cfg.json");
    let text = serde_json::json!({
        "dataset": data,
        "layers": 2,
        "hidden": 8,
        "max_epochs": 2,
        "seeds": [0, 1],
        "diag_every": 0,
    });
    fs::write(&cfg, text.to_string()).unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path());
    let first = fs::read(&a).unwrap();
    let b = gen_small(dir.path());
    assert_eq!(first, fs::read(b).unwrap());
}

#[test]
fn train_writes_records_then_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let cfg = write_config(dir.path(), &data);
    let out = ssfg(&["train", "--config", &cfg, "--override", "max_epochs=1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&out);
    // Per seed: epoch 0 and epoch 1 on train and val, then test.
    assert_eq!(rows.len(), 2 * 5 + 1);
    assert!(rows[..10].iter().all(|r| r["split"].is_string() && r["loss"].is_f64()));
    let summary = &rows[10]["summary"];
    assert_eq!(summary["seeds"], serde_json::json!([0, 1]));
    assert_eq!(summary["metric"], "weighted_accuracy");
}

#[test]
fn metrics_file_and_checkpoints_feed_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let cfg = write_config(dir.path(), &data);
    let metrics = dir.path().join("metrics.jsonl");
    let ckpt = dir.path().join("ckpt");
    let out = ssfg(&[
        "train",
        "--config",
        &cfg,
        "--metrics",
        metrics.to_str().unwrap(),
        "--checkpoint-dir",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(&metrics).unwrap().lines().count() > 0);
    assert!(ckpt.join("seed1.bin").exists());

    let model = ckpt.join("seed0.json");
    let out = ssfg(&["sweep-test-scale", "--model", model.to_str().unwrap(), "--data", &data]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&out);
    let scales: Vec<f64> = rows.iter().map(|r| r["scale"].as_f64().unwrap()).collect();
    assert_eq!(scales, vec![0.8, 0.9, 1.0, 1.1, 1.2]);
}

#[test]
fn diagnose_reports_each_power() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let out = ssfg(&["diagnose", "--data", &data, "--k", "0,2,16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&out);
    let ks: Vec<u64> = rows.iter().map(|r| r["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, vec![0, 2, 16]);
    let d: Vec<f64> = rows.iter().map(|r| r["distance_to_stationary"].as_f64().unwrap()).collect();
    assert!(d[2] < d[1] && d[1] < d[0]);
}

#[test]
fn bad_override_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let cfg = write_config(dir.path(), &data);
    let out = ssfg(&["train", "--config", &cfg, "--override", "layers=0"]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn corrupted_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let text = fs::read_to_string(&data).unwrap();
    fs::write(&data, &text[..text.len() / 2]).unwrap();
    let out = ssfg(&["diagnose", "--data", &data]);
    assert!(!out.status.success());
}
