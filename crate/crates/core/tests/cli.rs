use std::path::Path;
use std::process::{Command, Output};

fn clipsbr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clipsbr")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = clipsbr(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--num-items", "60", "--num-clusters", "4", "--num-users", "30", "--out", "syn"]);
    ok(dir, &["preprocess", "--input", "syn/interactions.tsv"]);
    let mined = ok(dir, &["mine"]);
    assert!(mined.contains("clusters"));
    ok(dir, &["--epochs", "2", "--dim", "8", "train"]);
    let table = ok(dir, &["--k", "5", "--k", "20", "eval", "--split", "test"]);
    assert!(table.contains("MRR") && table.lines().any(|l| l.starts_with("20")));

    for f in [
        "data/train.tsv",
        "data/manifest.json",
        "artifacts/graph.edges",
        "artifacts/partition.json",
        "out/checkpoint.bin",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(dir.join("out/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "valid_mrr5", "valid_recall5", "elapsed_s"] {
        assert!(first.get(key).is_some(), "log lacks {key}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/eval_test.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "test");
}

#[test]
fn same_seed_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--num-items", "40", "--num-clusters", "4", "--num-users", "20", "--out", "syn"]);
    ok(dir, &["preprocess", "--input", "syn/interactions.tsv"]);
    ok(dir, &["mine"]);
    let strip = |dir: &Path| -> Vec<serde_json::Value> {
        std::fs::read_to_string(dir.join("out/train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("elapsed_s");
                v
            })
            .collect()
    };
    ok(dir, &["--epochs", "2", "--dim", "8", "--seed", "5", "train"]);
    let first = (strip(dir), std::fs::read(dir.join("out/checkpoint.bin")).unwrap());
    ok(dir, &["--epochs", "2", "--dim", "8", "--seed", "5", "train"]);
    let second = (strip(dir), std::fs::read(dir.join("out/checkpoint.bin")).unwrap());
    assert_eq!(first, second);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for args in [
        &["preprocess", "--input", "missing.tsv"][..],
        &["--no-such-flag", "mine"],
        &["--resolution", "0", "mine"],
        &["--prompt-variant", "X", "train"],
        &["eval", "--checkpoint", "nope.bin"],
    ] {
        let out = clipsbr(dir, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn mining_before_preprocessing_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = clipsbr(tmp.path(), &["mine"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
