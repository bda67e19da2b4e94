use std::path::Path;
use std::process::{Command, Output};

use gloss_core::dataset::{load_dataset, DataFormat};
use gloss_core::encoder::load_checkpoint;
use gloss_core::evaluation::macro_silhouette;

fn gloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gloss")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gloss(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn blobs(dir: &Path, n: usize) -> String {
    let f = dir.join("blobs.bin");
    ok(&["gen-blobs", "--n", &n.to_string(), "--dim", "6", "--out", p(&f)]);
    p(&f).to_string()
}

#[test]
fn zero_separation_blobs_have_no_cluster_structure() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("flat.csv");
    ok(&["gen-blobs", "--n", "600", "--sep", "0", "--seed", "3", "--out", p(&f)]);
    let ds = load_dataset(&f, DataFormat::Csv).unwrap();
    assert_eq!(ds.len(), 600);
    let s = macro_silhouette(ds.features(), ds.labels()).unwrap();
    assert!(s.abs() < 0.02, "{s}");
}

#[test]
fn train_writes_report_config_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 120);
    let out = dir.path().join("run");
    let stdout = ok(&["train", "--data", &data, "--set", "max_epochs=3", "--set", "embed_dim=4", "--out", p(&out)]);
    assert!(stdout.contains("test accuracy"));

    let jsonl = std::fs::read_to_string(out.join("report.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty() && records.len() <= 3);
    assert!(records[0]["timings"]["graph_build"].as_f64().unwrap() > 0.0);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["test_accesses"], 1);
    let cfg = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(cfg.contains("max_epochs = 3"));
    let ck = load_checkpoint(out.join("model.ck")).unwrap();
    assert_eq!(ck.encoder.d_out, 4);
    assert!(ck.head.is_some());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 120);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "mode = \"standalone\"\nloss = \"scl\"\nmax_epochs = 2\n").unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--data", &data, "--config", p(&cfg), "--seed", "4", "--out", p(&out)]);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("mode = \"standalone\"") && written.contains("seed = 4"));

    std::fs::write(&cfg, "gama = 0.5\n").unwrap();
    let bad = gloss(&["train", "--data", &data, "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gama"));
}

#[test]
fn runtime_errors_exit_1() {
    let out = gloss(&["train", "--data", "/nonexistent/data.bin"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 120);
    let out = gloss(&["train", "--data", &data, "--set", "gamma=1.5", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verification_commands_pass() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&["lpa-verify", "--instances", "10", "--walk-instances", "2", "--walks", "20000", "--out", p(dir.path())]);
    assert!(s.contains("pass"));
    assert!(dir.path().join("lpa_verify.json").exists());
    let s = ok(&["gradcheck", "--instances", "3", "--out", p(dir.path())]);
    assert!(s.contains("pass"));
}

#[test]
fn dump_graph_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 120);
    let out = dir.path().join("g");
    ok(&["dump-graph", "--data", &data, "--set", "batch_size=10", "--out", p(&out)]);
    let w = std::fs::read_to_string(out.join("w.csv")).unwrap();
    let rows: Vec<Vec<f64>> = w.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 10);
        assert_eq!(r[i], 0.0);
    }
    let t = std::fs::read_to_string(out.join("t.csv")).unwrap();
    let t: Vec<Vec<f64>> = t.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    for j in 0..10 {
        assert!(((0..10).map(|i| t[i][j]).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("graph.json")).unwrap()).unwrap();
    assert!(meta["spectral_radius"].as_f64().unwrap() < 1.0);
}

#[test]
fn sweep_and_compare_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 150);
    let out = dir.path().join("s");
    ok(&["sweep", "--data", &data, "--gamma", "0.3,0.6", "--sigma-mult", "1,2", "--seeds", "0", "--set", "max_epochs=2", "--out", p(&out)]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let out = dir.path().join("c");
    ok(&["compare", "--data", &data, "--losses", "gloss_o,ce", "--seeds", "0,1", "--set", "max_epochs=2", "--out", p(&out)]);
    let sig = std::fs::read_to_string(out.join("significance.csv")).unwrap();
    let lines: Vec<&str> = sig.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("gloss_o,ce,"));
    assert!(out.join("compare.csv").exists() && out.join("compare.json").exists());
}
