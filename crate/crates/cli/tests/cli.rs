use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pansharp_core::raster::{load_raster, upsample_poly23};

fn pansharp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pansharp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pansharp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn synth(dir: &Path, size: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join("scene");
    let mut args = vec!["synth", "--size", size, "--bands", "4", "--seed", "5", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn align_recovers_the_manifest_shifts() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "256", &["--shifts", "0,0;1.5,-1;-2,0.5;0,3"]);
    let out = dir.path().join("align");
    ok(&["align", "--pan", s(&scene.join("pan.json")), "--ms", s(&scene.join("ms.json")), "--out", s(&out), "--save-rho-max"]);
    let manifest = json(&scene.join("manifest.json"));
    let found: Vec<serde_json::Value> = json(&out.join("align.json")).as_array().unwrap().iter().map(|b| b["shift"].clone()).collect();
    assert_eq!(&serde_json::Value::Array(found), &manifest["band_shifts"]);
    assert!(out.join("rho_max.json").exists() && out.join("config.toml").exists());
}

#[test]
fn zero_trunk_without_adaptation_reproduces_interpolation() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "64", &[]);
    let w = dir.path().join("w");
    ok(&["init", "--bands", "4", "--zero-trunk", "--model.width=8", "--out", s(&w)]);
    let out = dir.path().join("fused");
    ok(&[
        "pansharpen", "--pan", s(&scene.join("pan.json")), "--ms", s(&scene.join("ms.json")),
        "--weights", s(&w.join("weights.json")), "--adapt", "0", "--out", s(&out),
    ]);
    let fused = load_raster(&out.join("fused.json")).unwrap();
    let exp = upsample_poly23(&load_raster(&scene.join("ms.json")).unwrap(), 4).unwrap();
    let rounded: Vec<f64> = exp.data().iter().map(|&v| v as f32 as f64).collect();
    assert_eq!(fused.data(), &rounded[..]);
    let report = json(&out.join("report.json"));
    for key in ["d_lambda_align", "r_ergas", "d_lambda", "d_rho"] {
        assert!(report[key].is_f64(), "{key} missing from {report}");
    }
}

#[test]
fn metrics_of_ground_truth_and_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "128", &["--shifts", "0,0;1,0;0,-1.5;0.5,0.5"]);
    let (pan, ms, gt) = (scene.join("pan.json"), scene.join("ms.json"), scene.join("gt.json"));
    let out = dir.path().join("m");
    let stdout = ok(&["metrics", "--fused", s(&gt), "--pan", s(&pan), "--ms", s(&ms), "--out", s(&out)]).stdout;
    let report: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(report, json(&out.join("report.json")));
    assert!(report["d_lambda_align"].as_f64().unwrap() < 0.02);
    assert!(report["d_lambda"].as_f64().unwrap() < 0.02);

    let plain = ok(&["metrics", "--fused", s(&gt), "--pan", s(&pan), "--ms", s(&ms), "--no-align", "--out", s(&out)]).stdout;
    let plain: serde_json::Value = serde_json::from_slice(&plain).unwrap();
    assert!(plain.get("d_lambda_align").is_none());
    assert_eq!(plain["d_lambda"], report["d_lambda"]);

    let bad = pansharp(&["metrics", "--fused", s(&ms), "--pan", s(&pan), "--ms", s(&ms), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn input_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "64", &[]);
    let missing = dir.path().join("nowhere/weights.json");
    let out = pansharp(&[
        "pansharpen", "--pan", s(&scene.join("pan.json")), "--ms", s(&scene.join("ms.json")),
        "--weights", s(&missing), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));

    let out = pansharp(&["init", "--bands", "3", "--loss.gama=0.1", "--out", s(&dir.path().join("i"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));

    let wrong_bands = dir.path().join("w2");
    ok(&["init", "--bands", "3", "--model.width=4", "--out", s(&wrong_bands)]);
    let out = pansharp(&[
        "pansharpen", "--pan", s(&scene.join("pan.json")), "--ms", s(&scene.join("ms.json")),
        "--weights", s(&wrong_bands.join("weights.json")), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_one_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "64", &[]);
    let out = dir.path().join("a");
    let run = pansharp(&[
        "adapt", "--pan", s(&scene.join("pan.json")), "--ms", s(&scene.join("ms.json")), "--full-ta",
        "--model.width=4", "--adapt.iterations=4", "--adapt.learning_rate=1e150", "--out", s(&out),
    ]);
    assert_eq!(run.status.code(), Some(1), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("weights.json").exists() && out.join("log.jsonl").exists());
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("jesse_total") && !text.contains("FAIL"));
}

#[test]
fn config_file_is_echoed_with_overrides_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\n[model]\nwidth = 6\n").unwrap();
    let out = dir.path().join("w");
    ok(&["init", "--config", s(&cfg), "--bands", "2", "--model.width=5", "--out", s(&out)]);
    let echoed: toml::Table = std::fs::read_to_string(out.join("config.toml")).unwrap().parse().unwrap();
    assert_eq!(echoed["seed"].as_integer(), Some(4));
    assert_eq!(echoed["model"]["width"].as_integer(), Some(5));
    assert_eq!(json(&out.join("weights.json"))["model"]["width"], 5);
}
