use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn acmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acmap"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn acmap")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = acmap(args, cwd);
    assert_eq!(code(&out), 0, "{args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = acmap(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "map", "train", "eval", "inspect"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    assert_eq!(code(&acmap(&["map", "--help"], dir.path())), 0);
}

#[test]
fn unknown_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&acmap(&["--bogus"], dir.path())), 1);
    assert_eq!(code(&acmap(&["inspect", "x.amap", "--bogus"], dir.path())), 1);
    assert_eq!(code(&acmap(&[], dir.path())), 1);
}

#[test]
fn invalid_flag_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--out", "x.wav", "--duration", "0.1"], d);
    assert_eq!(code(&acmap(&["map", "--input", "x.wav", "--out", "y.amap", "--beamformer", "foo"], d)), 1);
    assert_eq!(code(&acmap(&["map", "--input", "x.wav", "--out", "y.amap", "--diag-load", "0.1"], d)), 1);
    assert_eq!(code(&acmap(&["map", "--input", "x.wav", "--out", "y.amap", "--n-fft", "300"], d)), 1);
    assert_eq!(code(&acmap(&["eval", "--manifest", "m.csv", "--mode", "env-independent", "--out", "r.json"], d)), 1);
    assert_eq!(code(&acmap(&["simulate", "--az", "120", "--out", "z.wav"], d)), 1);
    assert!(!d.join("y.amap").exists());
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&acmap(&["map", "--input", "absent.wav", "--out", "y.amap"], dir.path())), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = acmap(
        &["train", "--synthetic", "8", "--epochs", "3", "--optimizer", "sgd", "--lr", "1e30", "--out", "m.ckpt"],
        dir.path(),
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--dataset", "16", "--out-dir", "ds", "--duration", "0.1", "--fs", "16000"], d);
    let manifest = fs::read_to_string(d.join("ds/manifest.csv")).unwrap();
    assert!(manifest.starts_with("wav_path,label,device,environment,speaker_id,split"));
    assert_eq!(manifest.lines().count(), 33);

    ok(&["map", "--input", "ds/rec-0000.wav", "--n-fft", "256", "--out", "m.amap", "--png", "m.png"], d);
    assert!(d.join("m.amap.json").exists());
    assert!(d.join("m.png").exists());

    let common = ["--manifest", "ds/manifest.csv", "--device", "D1", "--n-fft", "256", "--epochs", "3"];
    let mut train = vec!["train", "--out", "model.ckpt", "--history", "history.json"];
    train.extend(common);
    ok(&train, d);
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 3);

    let mut eval = vec!["eval", "--mode", "env-independent", "--holdout", "EnvD", "--runs", "2", "--out", "report.json"];
    eval.extend(common);
    ok(&eval, d);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells[0]["environment"], "all");
    assert_eq!(cells[0]["eers"].as_array().unwrap().len(), 2);
    assert!(cells[0]["ci_half_width"].is_number());

    ok(&["eval", "--manifest", "ds/manifest.csv", "--checkpoint", "model.ckpt", "--out", "scored.json"], d);
    assert!(d.join("scored.json").exists());

    let overridden = acmap(
        &["eval", "--manifest", "ds/manifest.csv", "--checkpoint", "model.ckpt", "--out", "x.json", "--geometry", "linear-4"],
        d,
    );
    assert_eq!(code(&overridden), 0, "checkpoint preprocessing takes precedence over map flags");
}

#[test]
fn inspect_reports_source_direction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--geometry", "hex-6", "--az", "30", "--el", "-9", "--signal", "tone:1000", "--duration", "0.3", "--out", "t.wav"], d);
    ok(&["map", "--input", "t.wav", "--geometry", "hex-6", "--out", "t.amap"], d);
    let out = ok(&["inspect", "t.amap", "--json"], d);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["shape"], serde_json::json!([4, 91, 41]));
    let mid = &v["bands"][1];
    assert_eq!(mid["name"], "mid");
    assert_eq!(mid["argmax"]["azimuth_deg"].as_f64().unwrap().round(), 30.0);
    assert_eq!(mid["argmax"]["elevation_deg"].as_f64().unwrap().round(), -9.0);
    assert!(mid["max"].as_f64().unwrap() >= mid["min"].as_f64().unwrap());

    let text = ok(&["inspect", "t.amap"], d);
    assert!(String::from_utf8_lossy(&text.stdout).contains("4 bands × 91 azimuths × 41 elevations"));
}

#[test]
fn inspect_corrupt_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.amap"), b"not a map").unwrap();
    assert_eq!(code(&acmap(&["inspect", "bad.amap"], d)), 2);
    assert_eq!(code(&acmap(&["inspect", "absent.amap"], d)), 2);
}

#[test]
fn training_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.ckpt", "b.ckpt"] {
        ok(&["--seed", "5", "train", "--synthetic", "8", "--epochs", "3", "--out", name], d);
    }
    assert_eq!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("b.ckpt")).unwrap());
    assert_eq!(fs::read(d.join("a.ckpt.json")).unwrap(), fs::read(d.join("b.ckpt.json")).unwrap());
    ok(&["--seed", "6", "train", "--synthetic", "8", "--epochs", "3", "--out", "c.ckpt"], d);
    assert_ne!(fs::read(d.join("a.ckpt")).unwrap(), fs::read(d.join("c.ckpt")).unwrap());
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.wav", "b.wav"] {
        ok(&["--seed", "3", "simulate", "--signal", "noise:200-4000", "--snr", "10", "--duration", "0.2", "--out", name], d);
    }
    assert_eq!(fs::read(d.join("a.wav")).unwrap(), fs::read(d.join("b.wav")).unwrap());
}

#[test]
fn maps_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--signal", "speech:140", "--snr", "15", "--az", "-20", "--duration", "0.3", "--out", "s.wav"], d);
    for bf in ["das", "srp-phat", "mvdr"] {
        let one = format!("{bf}-1.amap");
        let eight = format!("{bf}-8.amap");
        ok(&["--threads", "1", "map", "--input", "s.wav", "--beamformer", bf, "--out", &one], d);
        ok(&["--threads", "8", "map", "--input", "s.wav", "--beamformer", bf, "--out", &eight], d);
        assert_eq!(fs::read(d.join(&one)).unwrap(), fs::read(d.join(&eight)).unwrap(), "{bf}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--out", "x.wav", "--duration", "0.1"], d);
    fs::write(d.join("cfg.json"), r#"{"beamformer": "nonsense", "n_fft": 256}"#).unwrap();
    let base = ["--config", "cfg.json", "map", "--input", "x.wav", "--out", "y.amap"];
    assert_eq!(code(&acmap(&base, d)), 1);
    let mut fixed = base.to_vec();
    fixed.extend(["--beamformer", "srp-phat"]);
    ok(&fixed, d);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("y.amap.json")).unwrap()).unwrap();
    assert_eq!(meta["beamformer"]["kind"], "srp-phat");
}

#[test]
fn long_recordings_are_mapped_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--out", "long.wav", "--duration", "1.0"], d);
    let out = ok(&["map", "--input", "long.wav", "--max-seconds", "0.4", "--out", "seg.amap"], d);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
    for i in 0..3 {
        assert!(d.join(format!("seg-{i}.amap")).exists());
    }
}
