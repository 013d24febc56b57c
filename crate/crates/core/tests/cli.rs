//! Drives the built binary through every verb on synthetic assets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use depthpatch::cli::manifest_name;
use sha2::{Digest, Sha256};

const SMALL_RUN: &str = r#"
seed = 3
iterations = 4
lambda = 0.0
composite_samples = 1

[assets]
kind = "synthetic"
synthetic_scenes = 2

[eval]
distances_m = [7.0, 20.0]
laterals_m = [0.0]
scenes = 1
"#;

fn depthpatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthpatch"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn hex_sha256(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Every artifact listed in a manifest exists and hashes to its recorded digest.
fn assert_manifest_matches(dir: &Path, verb: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(manifest_name(verb))).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["verb"], verb);
    let artifacts = m["artifacts"].as_array().unwrap();
    assert!(!artifacts.is_empty());
    for a in artifacts {
        let rel = a["path"].as_str().unwrap();
        assert_eq!(hex_sha256(&dir.join(rel)), a["sha256"].as_str().unwrap(), "{rel}");
    }
    m
}

fn str_path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = depthpatch(&["attack", "--config", "/nonexistent/run.toml", "--out", str_path(&out)]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn unknown_keys_and_bad_overrides_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "iterations = 1\n[attack]\nx = 1\n").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&depthpatch(&["attack", "--config", str_path(&cfg), "--out", str_path(&out)])), 2);

    fs::write(&cfg, SMALL_RUN).unwrap();
    let res = depthpatch(&["attack", "--config", str_path(&cfg), "--out", str_path(&out), "--set", "no.such.key=1"]);
    assert_eq!(code(&res), 2);
}

#[test]
fn unknown_verb_is_a_usage_error() {
    assert_eq!(code(&depthpatch(&["frobnicate"])), 2);
}

#[test]
fn missing_run_artifacts_are_asset_errors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("config.toml"), SMALL_RUN).unwrap();
    let res = depthpatch(&["evaluate", "--run", str_path(tmp.path())]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn every_verb_round_trips_with_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let run = tmp.path().join("run");

    let res = depthpatch(&["attack", "--config", str_path(&cfg), "--out", str_path(&run)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["patch.png", "theta.json", "loss_log.csv", "eval_snapshot.json", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let m = assert_manifest_matches(&run, "attack");
    assert_eq!(m["seed"], 3);
    assert!(m["config"].as_str().unwrap().contains("iterations = 4"));

    let res = depthpatch(&["evaluate", "--run", str_path(&run)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_manifest_matches(&run, "evaluate");
    let mut rows = csv::Reader::from_path(run.join("eval.csv")).unwrap();
    assert_eq!(rows.records().count(), 2);

    let res = depthpatch(&["defend-eval", "--run", str_path(&run), "--defense", "jpeg:90", "--defense", "median:5"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_manifest_matches(&run, "defend-eval");
    let mut rows = csv::Reader::from_path(run.join("defense.csv")).unwrap();
    assert_eq!(rows.records().count(), 2);

    let res = depthpatch(&["defend-eval", "--run", str_path(&run), "--defense", "sharpen:3"]);
    assert_eq!(code(&res), 2);

    let figs = tmp.path().join("figs");
    let res = depthpatch(&["plot", "--eval", str_path(&run), "--out", str_path(&figs)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["distance_error.png", "error_cdf.png", "defense_jpeg.png", "defense_median.png"] {
        assert!(figs.join(f).is_file(), "{f}");
    }

    let camera = tmp.path().join("camera.json");
    fs::write(&camera, r#"{"f": 40.0, "tan_alpha": 0.05, "h_cam": 1.6}"#).unwrap();
    let lidar = tmp.path().join("lidar");
    let res = depthpatch(&[
        "export-lidar",
        "--image",
        str_path(&run.join("patch.png")),
        "--camera",
        str_path(&camera),
        "--out",
        str_path(&lidar),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_manifest_matches(&lidar, "export-lidar");
    let xyz = fs::read_to_string(lidar.join("points.xyz")).unwrap();
    assert!(xyz.lines().count() > 0);

    // Same config and seed: identical attack artifacts.
    let again = tmp.path().join("again");
    assert_eq!(code(&depthpatch(&["attack", "--config", str_path(&cfg), "--out", str_path(&again)])), 0);
    for f in ["patch.png", "theta.json", "loss_log.csv", "eval_snapshot.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    // The resolved snapshot alone reproduces them too.
    let replay = tmp.path().join("replay");
    let snapshot = run.join("config.toml");
    assert_eq!(code(&depthpatch(&["attack", "--config", str_path(&snapshot), "--out", str_path(&replay)])), 0);
    for f in ["patch.png", "theta.json", "loss_log.csv", "eval_snapshot.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(replay.join(f)).unwrap(), "{f}");
    }
}
