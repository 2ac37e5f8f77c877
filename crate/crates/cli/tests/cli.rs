use std::path::Path;
use std::process::{Command, Output};

fn salience(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salience"))
        .current_dir(dir)
        .env_remove("SALIENCE_BACKEND")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = salience(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, path: &str) -> String {
    std::fs::read_to_string(dir.join(path)).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn synth(dir: &Path) {
    ok(dir, &["--seed", "3", "--out", "data", "synth", "--subjects", "6", "--triples", "40", "--corpus-sentences", "100"]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(salience(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(salience(dir.path(), &["--backend", "bogus", "synth"]).status.code(), Some(2));
    assert_eq!(salience(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = salience(dir.path(), &["score", "--input", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "unknown_key = 1\n").unwrap();
    let out = salience(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reference_backend_requires_a_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = salience(dir.path(), &["--backend", "reference", "score", "--input", "data/test.jsonl"]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn uniform_scoring_writes_one_line_per_triple() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    ok(dir.path(), &["--out", "scored", "score", "--input", "data/test.jsonl"]);
    let input = read(dir.path(), "data/test.jsonl");
    let scores = read(dir.path(), "scored/scores.jsonl");
    assert_eq!(input.lines().count(), scores.lines().count());
    for line in scores.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["salience"].is_number(), "{line}");
        assert!(v.get("label").is_none(), "{line}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "scored/manifest")).unwrap();
    assert_eq!(manifest["command"], "score");
    assert!(manifest["inputs"]["data/test.jsonl"].is_string());
    assert!(manifest["outputs"]["scores.jsonl"].is_string());

    ok(dir.path(), &["--out", "labeled", "score", "--input", "data/test.jsonl", "--threshold", "-10"]);
    assert!(read(dir.path(), "labeled/scores.jsonl").lines().all(|l| l.contains("\"label\":1")));

    ok(dir.path(), &["--out", "ev", "eval", "--input", "data/test.jsonl", "--scores", "scored/scores.jsonl"]);
    let metrics = read(dir.path(), "ev/metrics.txt");
    assert!(metrics.lines().any(|l| l.starts_with("auc: ")), "{metrics}");
}

#[test]
fn splits_are_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for (out, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        ok(dir.path(), &["--seed", seed, "--out", out, "split", "--input", "data/train.jsonl", "--mode", "concept"]);
    }
    let a = read(dir.path(), "a/assignment.jsonl");
    assert_eq!(a, read(dir.path(), "b/assignment.jsonl"));
    assert_eq!(a.lines().count(), read(dir.path(), "data/train.jsonl").lines().count());
}

#[test]
fn spearman_analysis_reports_rho() {
    let dir = tempfile::tempdir().unwrap();
    let lines: String = (0..10).map(|i| format!("{{\"x\": {i}, \"y\": {}}}\n", i * i)).collect();
    std::fs::write(dir.path().join("xy.jsonl"), lines).unwrap();
    ok(dir.path(), &["analyze", "spearman", "--input", "xy.jsonl"]);
    let metrics = read(dir.path(), "out/metrics.json-lines");
    let v: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(v["spearman_rho"], 1.0, "{metrics}");
}
