use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn blurseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blurseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = blurseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, name: &str, seed: u64) -> std::path::PathBuf {
    let cfg = json!({
        "output_dir": root.join(name),
        "seed": seed,
        "pairs": 3,
        "height": 24,
        "width": 24,
        "kernel_size": 7,
        "mode": "two_region",
        "kernels": [{"length": 3.0, "angle": 0.0}, {"length": 5.0, "angle": 1.2, "trajectory_seed": 4}]
    });
    let cfg_path = root.join(format!("{name}.json"));
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    ok(&["synth", "--config", p(&cfg_path)]);
    root.join(name).join("manifest.jsonl")
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = synth(root, "data", 1);
    let fit = root.join("fit");
    ok(&[
        "fit-kernels",
        "--run-dir",
        p(&fit),
        "--manifest",
        p(&manifest),
        "--classes",
        "2",
        "--kernel-size",
        "7",
        "--alternations",
        "2",
        "--gradient-steps",
        "2",
    ]);
    assert!(fit.join("kernels/k1.txt").exists() && fit.join("kernels/k2.txt").exists());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    assert!(report["assignment_losses"].as_array().unwrap().len() >= 2);

    let disc = root.join("disc");
    ok(&["discretize", "--run-dir", p(&disc), "--manifest", p(&manifest), "--kernels", p(&fit.join("kernels")), "--class-images"]);
    for id in ["00000", "00001", "00002"] {
        assert!(disc.join(format!("maps/{id}.png")).exists());
        assert!(disc.join(format!("assembled/{id}.pfm")).exists());
        assert!(disc.join(format!("classes/{id}/class2.pfm")).exists());
    }

    let d2c = root.join("d2c");
    ok(&["d2c-fit", "--run-dir", p(&d2c), "--manifest", p(&manifest), "--maps", p(&disc.join("maps")), "--classes", "2", "--patch", "3"]);
    let apply = root.join("apply");
    ok(&[
        "d2c-apply",
        "--run-dir",
        p(&apply),
        "--manifest",
        p(&manifest),
        "--maps",
        p(&disc.join("maps")),
        "--filters",
        p(&d2c.join("filters.json")),
    ]);
    let eval = root.join("eval");
    ok(&["eval", "--run-dir", p(&eval), "--manifest", p(&manifest), "--restored", p(&apply.join("restored"))]);
    let records: Value = serde_json::from_str(&std::fs::read_to_string(eval.join("records.json")).unwrap()).unwrap();
    assert!(records.to_string().contains("psnr"));

    let vis = root.join("vis");
    ok(&["visualize", "--run-dir", p(&vis), "--maps", p(&disc.join("maps")), "--classes", "2"]);
    assert_eq!(std::fs::read_dir(vis.join("colored")).unwrap().count(), 3);
    for run in [&fit, &disc, &d2c, &apply, &eval, &vis] {
        let meta: Value = serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
        assert!(meta["command"].is_string() && meta.get("config").is_some());
    }
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = blurseg(&[
        "discretize",
        "--run-dir",
        p(&dir.path().join("r")),
        "--manifest",
        "/nonexistent/manifest.jsonl",
        "--kernels",
        "/nonexistent",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"classes": 2, "bogus": 1}"#).unwrap();
    let out = blurseg(&["visualize", "--run-dir", p(&dir.path().join("v")), "--maps", p(dir.path()), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("bogus"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 5);
    let b = synth(dir.path(), "b", 5);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
