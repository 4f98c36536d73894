use std::path::Path;
use std::process::{Command, Output};

fn shoprank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shoprank"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn smoke_run_then_cached_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run = shoprank(dir.path(), &["--smoke", "run"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("config.toml").exists());

    let again = shoprank(dir.path(), &["evaluate"]);
    assert!(again.status.success());
    assert!(stderr(&again).contains("stage=evaluate status=cached"), "{}", stderr(&again));

    let report = shoprank(dir.path(), &["report"]);
    assert!(report.status.success());
    assert!(!report.stdout.is_empty());
}

#[test]
fn missing_artifact_exits_nonzero_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = shoprank(dir.path(), &["--smoke", "evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("error: stage `evaluate` failed"), "{err}");
    assert!(err.contains("shoprank featurize"), "{err}");
}

#[test]
fn single_model_training_needs_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = shoprank(dir.path(), &["--smoke", "train", "--model", "lambdamart", "--mask", "YNNY"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("train"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mask = shoprank(dir.path(), &["train", "--model", "lambdamart", "--mask", "YYY"]);
    assert_eq!(mask.status.code(), Some(1));
    let usage = shoprank(dir.path(), &["frobnicate"]);
    assert!(!usage.status.success());
}

#[test]
fn config_prints_toml_with_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = shoprank(dir.path(), &["--seed", "42", "config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 42"), "{text}");
}
