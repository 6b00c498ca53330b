use std::path::Path;
use std::process::{Command, Output};

fn evtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtrack")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SHORT: &str = "[motion]\nduration_us = 60000\n";

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = evtrack(&[
            "--config",
            &config,
            "--seed",
            "3",
            "--output",
            out_dir.to_str().unwrap(),
            "all",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("R_rel"));
        let files: Vec<Vec<u8>> = ["events.evt", "track_log.csv", "poses.csv"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        assert!(out_dir.join("manifest.json").exists());
        assert!(out_dir.join("metrics.json").exists());
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_event_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = evtrack(&["--output", dir.path().join("empty").to_str().unwrap(), "track"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("events.evt"));
}

#[test]
fn three_keypoints_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[scene]\nkeypoints = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]\n",
    );
    let out = evtrack(&[
        "--config",
        &config,
        "--output",
        dir.path().to_str().unwrap(),
        "simulate",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient correspondences"));
    assert!(!dir.path().join("events.evt").exists());
}

#[test]
fn manifest_records_the_command_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT);
    let out = evtrack(&[
        "--config",
        &config,
        "--output",
        dir.path().to_str().unwrap(),
        "simulate",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    let text = manifest.to_string();
    assert!(text.contains("events.evt") && text.contains("truth.csv"), "{text}");
}

#[test]
fn zero_delta_is_rejected() {
    let out = evtrack(&["--delta", "0", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
}
