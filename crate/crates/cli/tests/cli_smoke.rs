//! Drives the binary through every subcommand on a mini synthetic slide.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> String {
    let output = Command::new(env!("CARGO_BIN_EXE_slidegrade"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "slidegrade {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn full_command_chain_on_mini_slide() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let path = |name: &str| -> String { base.join(name).to_string_lossy().to_string() };

    run(&[
        "synth",
        "--preset",
        "mini",
        "--count",
        "1",
        "--seed",
        "3",
        "--out-dir",
        &path("slides"),
    ]);
    assert!(base.join("slides/s000.png").exists());
    assert!(base.join("slides/s000.json").exists());

    run(&[
        "segment",
        "--input",
        &path("slides/s000.png"),
        "--output",
        &path("mask.png"),
    ]);
    run(&[
        "segment",
        "--input",
        &path("slides/s000.png"),
        "--output",
        &path("mask_otsu.png"),
        "--method",
        "otsu",
    ]);

    run(&[
        "tile",
        "--image",
        &path("slides/s000.png"),
        "--mask",
        &path("mask.png"),
        "--annotations",
        &path("slides/s000.json"),
        "--out-dir",
        &path("tiles"),
        "--patch-size",
        "128",
    ]);
    assert!(base.join("tiles/manifest.jsonl").exists());

    run(&[
        "em-run",
        "--patches",
        &path("tiles/patches"),
        "--labels",
        &path("tiles/manifest.jsonl"),
        "--annotated-fraction",
        "0.5",
        "--holdout-fraction",
        "0.2",
        "--iterations",
        "1",
        "--epochs",
        "400",
        "--seed",
        "1",
        "--out",
        &path("em"),
        "--feature-cache",
        &path("features.bin"),
    ]);
    assert!(base.join("em/model.json").exists());
    assert!(base.join("em/history.json").exists());
    assert!(base.join("features.bin").exists());

    // Rerunning with the cache in place still works and reuses it.
    run(&[
        "em-run",
        "--patches",
        &path("tiles/patches"),
        "--labels",
        &path("tiles/manifest.jsonl"),
        "--annotated-fraction",
        "0.5",
        "--holdout-fraction",
        "0.2",
        "--iterations",
        "1",
        "--epochs",
        "400",
        "--seed",
        "1",
        "--out",
        &path("em2"),
        "--feature-cache",
        &path("features.bin"),
    ]);
    let a = std::fs::read(base.join("em/model.json")).unwrap();
    let b = std::fs::read(base.join("em2/model.json")).unwrap();
    assert_eq!(a, b, "cached rerun differs");

    run(&[
        "heatmap",
        "--model",
        &path("em/model.json"),
        "--manifest",
        &path("tiles/manifest.jsonl"),
        "--patches",
        &path("tiles/patches"),
        "--out-heatmap",
        &path("heat.png"),
        "--out-classmap",
        &path("class.png"),
    ]);
    assert!(base.join("heat.png").exists());

    let score_json = run(&[
        "score",
        "--pred",
        &path("class.png"),
        "--truth",
        &path("class.png"),
        "--pred-manifest",
        &path("tiles/manifest.jsonl"),
        "--truth-manifest",
        &path("tiles/manifest.jsonl"),
    ]);
    let value: serde_json::Value = serde_json::from_str(&score_json).unwrap();
    assert_eq!(value["score"], 1.0);
    assert_eq!(value["accuracy"], 1.0);

    let metrics_json = run(&[
        "pipeline",
        "--preset",
        "mini",
        "--count",
        "2",
        "--patch-size",
        "128",
        "--resize-to",
        "0",
        "--epochs",
        "300",
        "--seed",
        "5",
        "--out",
        &path("run"),
    ]);
    let metrics: serde_json::Value = serde_json::from_str(&metrics_json).unwrap();
    assert!(metrics["accuracy"].as_f64().unwrap() > 0.0);
    for artifact in [
        "manifest.json",
        "metrics.json",
        "model.json",
        "history.json",
        "manifest.jsonl",
    ] {
        assert!(
            Path::new(&path("run")).join(artifact).exists(),
            "{artifact} missing"
        );
    }
    assert!(base.join("run/heatmaps/s000.png").exists());
    assert!(base.join("run/classmaps/s001.png").exists());
}
