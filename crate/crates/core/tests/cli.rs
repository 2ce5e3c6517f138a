mod common;

use std::path::Path;
use std::process::Command;

use common::quick_workspace;
use serde_json::Value;

struct Outcome {
    success: bool,
    stdout: String,
    summary: Value,
}

/// Runs the binary with `root` as the output root; the last stdout line must
/// be JSON whatever the exit status.
fn idrr(root: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_idrr"))
        .args(args)
        .env("IDRR_OUTPUT_ROOT", root)
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap_or_default();
    let summary: Value = serde_json::from_str(last)
        .unwrap_or_else(|e| panic!("final line `{last}` is not JSON: {e}"));
    let expected = if out.status.success() { "ok" } else { "error" };
    assert_eq!(summary["status"], expected, "{stdout}");
    Outcome {
        success: out.status.success(),
        stdout,
        summary,
    }
}

#[test]
fn learn_bpe_is_deterministic_and_accepts_zero_merges() {
    let dir = tempfile::tempdir().unwrap();
    let freq = dir.path().join("freq.txt");
    std::fs::write(&freq, "lower 5\nlowest 2\nnewer 6\nwider 3\n").unwrap();
    let f = freq.to_str().unwrap();
    let a = idrr(dir.path(), &["learn-bpe", f, "--merges", "10", "--out", "a.txt"]);
    let b = idrr(dir.path(), &["learn-bpe", f, "--merges", "10", "--out", "b.txt"]);
    assert!(a.success && b.success);
    assert_eq!(a.summary["merges"], 10);
    assert_eq!(
        std::fs::read(dir.path().join("a.txt")).unwrap(),
        std::fs::read(dir.path().join("b.txt")).unwrap()
    );

    let z = idrr(dir.path(), &["learn-bpe", f, "--merges", "0", "--out", "z.txt"]);
    assert_eq!(z.summary["merges"], 0);
    // l o w e r s t n i d
    assert_eq!(z.summary["vocab_size"], 10);
    assert_eq!(std::fs::read_to_string(dir.path().join("z.txt")).unwrap(), "");
}

#[test]
fn train_eval_and_export_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_workspace(dir.path());
    let config = dir.path().join("config.toml");
    cfg.save(&config).unwrap();
    let config = config.to_str().unwrap();
    let root = dir.path().join("out");

    let train = idrr(&root, &["train", config, "--out", "run"]);
    assert!(train.success);
    assert_eq!(train.summary["epochs"], 3);
    assert!(root.join("run/manifest.json").is_file());

    let first = idrr(&root, &["eval", "run", "--split", "dev"]);
    let second = idrr(&root, &["eval", "run", "--split", "dev"]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(first.summary["instances"], 64);
    assert_eq!(first.summary["accuracy"], train.summary["best_dev_accuracy"]);

    let corpus = std::fs::read_to_string(cfg.paths.corpus.as_ref().unwrap()).unwrap();
    let record: Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    let id = record["id"].as_str().unwrap();
    let export = idrr(&root, &["export-attention", "run", "--id", id, "--out", "maps"]);
    assert_eq!(export.summary["files"], 2 * cfg.model.layers);

    let missing = idrr(&root, &["export-attention", "run", "--id", "no-such-id"]);
    assert!(!missing.success);
    assert!(missing.summary["error"].as_str().unwrap().contains("no-such-id"));
}

#[test]
fn prep_contextual_and_ablate_report_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_workspace(dir.path());
    cfg.train.epochs = 1;
    let config = dir.path().join("config.toml");
    cfg.save(&config).unwrap();
    let config = config.to_str().unwrap();

    let prep = idrr(dir.path(), &["prep-contextual", config]);
    assert!(prep.success);
    assert_eq!(prep.summary["entries"], 2 * 192);
    assert!(dir.path().join("contextual.jsonl").is_file());

    let ablate = idrr(dir.path(), &["ablate", config, "--preset", "residual", "--out", "grid"]);
    assert_eq!(ablate.summary["rows"], 4);
    let csv = std::fs::read_to_string(dir.path().join("grid/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let bad = idrr(dir.path(), &["ablate", config, "--preset", "bogus"]);
    assert!(!bad.success);
}

#[test]
fn errors_exit_nonzero_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let eval = idrr(dir.path(), &["eval", "nowhere"]);
    assert!(!eval.success);
    assert_eq!(eval.summary["command"], "eval");

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[model]\nlayers = 0\n").unwrap();
    let train = idrr(dir.path(), &["train", config.to_str().unwrap()]);
    assert!(!train.success);
    assert!(train.summary["error"].as_str().unwrap().contains("model.layers"));
}
