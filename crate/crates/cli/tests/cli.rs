//! End-to-end checks of the `tsepi` binary: exit codes, machine-parseable
//! error lines, and the dataset layout contract.

use std::path::Path;
use std::process::Command;

fn tsepi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsepi"))
}

#[test]
fn synth_data_writes_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsepi()
        .args(["synth-data", "--split", "train", "--num", "2", "--seed", "5"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("train");
    assert!(base.join("manifest.jsonl").exists());
    assert!(base.join("mixture/00000.wav").exists());
    assert!(base.join("target/00001.wav").exists());
    assert!(base.join("pitch/00000.csv").exists());
}

#[test]
fn synth_data_is_deterministic_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = tsepi()
            .args(["synth-data", "--num", "2", "--seed", "9"])
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let wav_a = std::fs::read(a.path().join("train/mixture/00001.wav")).unwrap();
    let wav_b = std::fs::read(b.path().join("train/mixture/00001.wav")).unwrap();
    assert_eq!(wav_a, wav_b);
}

#[test]
fn seed_env_var_overrides_flag() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // same --seed but different TSEPI_SEED must differ
    for (dir, env_seed) in [(&a, "100"), (&b, "200")] {
        let out = tsepi()
            .args(["synth-data", "--num", "1", "--seed", "5"])
            .arg("--out")
            .arg(dir.path())
            .env("TSEPI_SEED", env_seed)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let wav_a = std::fs::read(a.path().join("train/mixture/00000.wav")).unwrap();
    let wav_b = std::fs::read(b.path().join("train/mixture/00000.wav")).unwrap();
    assert_ne!(wav_a, wav_b);
}

#[test]
fn missing_manifest_file_yields_machine_parseable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsepi()
        .args(["synth-data", "--num", "1", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let base = dir.path().join("train");
    std::fs::remove_file(base.join("target/00000.wav")).unwrap();
    let out = tsepi()
        .args(["train-pitch", "--steps", "1"])
        .arg("--manifest")
        .arg(base.join("manifest.jsonl"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[manifest]"), "stderr: {stderr}");
    assert!(stderr.contains("00000.wav"), "stderr: {stderr}");
}

#[test]
fn corrupt_manifest_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, "{\"id\": 0, broken\n").unwrap();
    let out = tsepi()
        .args(["train-pitch", "--steps", "1"])
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[manifest]"), "stderr: {stderr}");
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn eval_with_missing_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsepi()
        .args(["synth-data", "--num", "1", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = tsepi()
        .arg("eval")
        .arg("--manifest")
        .arg(dir.path().join("train/manifest.jsonl"))
        .args(["--pitch-ckpt", "/nonexistent.ckpt", "--tse-ckpt", "/nonexistent.ckpt"])
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[io]"), "stderr: {stderr}");
}

#[test]
fn bad_loss_weights_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsepi()
        .args(["synth-data", "--num", "1", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = tsepi()
        .args(["train-tse", "--steps", "1", "--loss-weights", "0.9,0.3"])
        .arg("--manifest")
        .arg(dir.path().join("train/manifest.jsonl"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[invalid-argument]"), "stderr: {stderr}");
}

#[test]
fn rir_dump_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsepi()
        .args(["synth-data", "--num", "1", "--seed", "4", "--dump-rirs"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rir_dir = dir.path().join("train/rir");
    assert!(rir_dir.join("00000_src0.wav").exists());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rir_dir.join("00000_src0.json")).unwrap())
            .unwrap();
    assert!(sidecar["room"]["rt60"].is_number());
    assert!(sidecar["direct_delay"].is_number());
    assert!(Path::new(&rir_dir.join("00000_src1.json")).exists());
}
