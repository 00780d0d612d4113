use std::path::Path;
use std::process::{Command, Output};

fn cfrobust(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cfrobust"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CFROBUST_SEED")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn train_explain_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    cfrobust(
        &["blobs", "--d", "2", "--n-per-class", "30", "--seed", "4", "--out", "blobs.csv"],
        root,
    );
    let csv = std::fs::read_to_string(root.join("blobs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);

    std::fs::write(
        root.join("exp.json"),
        r#"{
  "schema": 1,
  "dataset": { "source": "csv", "path": "blobs.csv" },
  "model": { "kind": "softmax" },
  "threshold_quantile": 0.5,
  "masking_sweep": true,
  "folds": 3,
  "output": "out"
}"#,
    )
    .unwrap();

    cfrobust(&["train", "--config", "exp.json"], root);
    assert!(root.join("out/model.json").exists());

    let out = cfrobust(
        &[
            "explain", "--model", "out/model.json", "--x", "-2,0.5", "--target", "1", "--mode",
            "plausible",
        ],
        root,
    );
    let res: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(res["target_label"], 1);
    assert_eq!(res["feasible"], true);

    let out = cfrobust(
        &["evaluate", "--config", "exp.json", "--max-test-per-fold", "4", "--out", "eval"],
        root,
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("closest") && text.contains("plausible"), "{text}");
    for name in ["result.json", "records.csv", "aggregates.csv"] {
        assert!(root.join("eval").join(name).exists(), "{name}");
    }
    let first = std::fs::read(root.join("eval/result.json")).unwrap();
    cfrobust(
        &["evaluate", "--config", "exp.json", "--max-test-per-fold", "4", "--out", "eval2"],
        root,
    );
    assert_eq!(first, std::fs::read(root.join("eval2/result.json")).unwrap());
}

#[test]
fn seed_flag_and_environment_agree() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    cfrobust(&["blobs", "--d", "3", "--seed", "9", "--out", "a.csv"], root);
    let status = Command::new(env!("CARGO_BIN_EXE_cfrobust"))
        .args(["blobs", "--d", "3", "--out", "b.csv"])
        .current_dir(root)
        .env("CFROBUST_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(root.join("a.csv")).unwrap(),
        std::fs::read(root.join("b.csv")).unwrap()
    );
}

#[test]
fn theory_and_dimension_commands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("theory.json"),
        r#"{"gaussian_dims": [2, 5], "uniform_dims": [3], "eps": [0.5],
            "draws": 2000, "bound_trials": 500, "tail_draws": 5000}"#,
    )
    .unwrap();
    let out = cfrobust(&["theory-check", "--config", "theory.json", "--out", "t"], root);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("bounds: 0 general / 0 linear"), "{text}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("t/theory_check.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    cfrobust(
        &["dim-study", "--dims", "2,4,8", "--max-test-per-fold", "5", "--out", "ds"],
        root,
    );
    let csv = std::fs::read_to_string(root.join("ds/dim_study.csv")).unwrap();
    assert!(csv.starts_with("d,kind,mode,median,count"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("bad.json"), r#"{"schema": 1, "dataset": {"source": "csv", "path": "missing.csv"}}"#)
        .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cfrobust"))
        .args(["evaluate", "--config", "bad.json"])
        .current_dir(root)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
