//! Integration tests for the command-line interface: exit codes, the
//! synth → train → caption → eval pipeline, and inspection output.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn muscap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muscap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Small-dimension config so training stays fast.
fn write_config(dir: &Path) -> String {
    let config = r#"{
        "mode": "pretrain-features",
        "dims": {"d_a": 8, "d_w": 16, "hidden": 12, "d_s": 16, "labels": 4},
        "training": {"epochs": 5, "seed": 42, "max_caption_len": 8},
        "paths": {
            "embeddings": "data/embeddings.txt",
            "manifest": "data/manifest.json",
            "checkpoint_out": "model.mcap",
            "report_out": "report.json"
        }
    }"#;
    fs::write(dir.join("config.json"), config).unwrap();
    "config.json".into()
}

#[test]
fn print_defaults_emits_valid_config_json() {
    let dir = tempdir().unwrap();
    let out = muscap(dir.path(), &["--print-defaults"]);
    assert_eq!(exit_code(&out), 0);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["dims"]["d_a"], 50);
    assert_eq!(parsed["dims"]["d_w"], 300);
    assert_eq!(parsed["mode"], "pretrain-features");
}

#[test]
fn missing_subcommand_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = muscap(dir.path(), &[]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = muscap(dir.path(), &["train", "--config", "nope.json"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn invalid_config_values_are_a_config_error() {
    let dir = tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"training": {"epochs": 0}}"#,
    )
    .unwrap();
    let out = muscap(dir.path(), &["train", "--config", "bad.json"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out = muscap(dir.path(), &["train", "--config", &config]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn synth_train_caption_eval_pipeline() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());

    let out = muscap(
        dir.path(),
        &["synth", "--config", &config, "--out-dir", "data"],
    );
    assert_eq!(
        exit_code(&out),
        0,
        "synth: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("data/manifest.json").exists());

    let out = muscap(dir.path(), &["train", "--config", &config]);
    assert_eq!(
        exit_code(&out),
        0,
        "train: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("model.mcap").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["train_loss"].as_array().unwrap().len(), 5);

    let out = muscap(dir.path(), &["caption", "--config", &config]);
    assert_eq!(
        exit_code(&out),
        0,
        "caption: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 4);
    for (i, line) in lines.iter().enumerate() {
        assert!(line.starts_with(&format!("p{i}\t")), "line {i}: {line}");
    }

    let out = muscap(
        dir.path(),
        &["caption", "--config", &config, "--playlist-id", "p2"],
    );
    assert_eq!(exit_code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 1);
    assert!(stdout(&out).starts_with("p2\t"));

    let out = muscap(
        dir.path(),
        &["caption", "--config", &config, "--playlist-id", "nope"],
    );
    assert_eq!(exit_code(&out), 3);

    let out = muscap(dir.path(), &["eval", "--config", &config]);
    assert_eq!(
        exit_code(&out),
        0,
        "eval: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(metrics["playlists"], 4);
    assert!(metrics["mean_teacher_forced_loss"]
        .as_f64()
        .unwrap()
        .is_finite());

    let out = muscap(dir.path(), &["inspect", "model.mcap"]);
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).contains("checkpoint: mode=PretrainFeatures"));
    assert!(stdout(&out).contains("enc1.w_z"));

    let out = muscap(dir.path(), &["inspect", "data/embeddings.txt"]);
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).contains("embeddings: vocab_size=24 dim=16"));
}

#[test]
fn truncated_checkpoint_is_a_data_error() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("broken.mcap"), b"MCAP\x01\x05\x00").unwrap();
    let out = muscap(dir.path(), &["inspect", "broken.mcap"]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn embedding_dim_mismatch_is_a_config_error() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out = muscap(
        dir.path(),
        &["synth", "--config", &config, "--out-dir", "data"],
    );
    assert_eq!(exit_code(&out), 0);
    // claim d_w = 7 against the 16-dimensional generated embeddings
    let text = fs::read_to_string(dir.path().join("config.json")).unwrap();
    fs::write(
        dir.path().join("config.json"),
        text.replace("\"d_w\": 16", "\"d_w\": 7"),
    )
    .unwrap();
    let out = muscap(dir.path(), &["train", "--config", &config]);
    assert_eq!(exit_code(&out), 2);
}
