use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_unimotion");

fn unimotion(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn synth(dir: &Path, frames: usize) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        format!(r#"{{"n_frames": {frames}, "frame_size": [320, 240], "scene_size": [800, 400], "jitter_sigma": 2.0}}"#),
    )
    .unwrap();
    let out = dir.join("rig");
    let o = Command::new(BIN)
        .args(["synth", "--config"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_config_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.json");
    let o = unimotion(&["pipeline", "--config"], &[&path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.json"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, r#"{"inputs": ["a"], "lamda": 3}"#).unwrap();
    let o = unimotion(&["stabilize", "--config"], &[&path]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metrics_of_identical_dirs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let rig = synth(dir.path(), 3);
    let cam = rig.join("cam0");
    let o = unimotion(&["metrics"], &[&cam, &cam]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["cropping"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((report["distortion"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn metrics_with_mismatched_frame_counts_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let rig = synth(dir.path(), 3);
    let short = dir.path().join("short");
    std::fs::create_dir(&short).unwrap();
    let first = std::fs::read_dir(rig.join("cam0"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .min()
        .unwrap();
    std::fs::copy(&first, short.join(first.file_name().unwrap())).unwrap();
    let o = unimotion(&["metrics"], &[&rig.join("cam0"), &short]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn one_frame_stabilize_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let rig = synth(dir.path(), 1);
    let o = unimotion(&["stabilize", "--config"], &[&rig.join("pipeline.json")]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
