use std::path::Path;
use std::process::{Command, Output};

use hnseg::config::PipelineConfig;

fn hnseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hnseg"))
        .args(args)
        .env("HNSEG_THREADS", "1")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(hnseg(&[]).status.code(), Some(2));
    assert_eq!(hnseg(&["frobnicate"]).status.code(), Some(2));
    let out = hnseg(&["phantom", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"error\":\"usage\""));
    assert_eq!(hnseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_violations_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::desk();
    cfg.sampler.patch_size = [30; 3];
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(hnseg(&["describe", "--config", arg(&path)]).status.code(), Some(3));
    assert_eq!(hnseg(&["describe", "--preset", "huge"]).status.code(), Some(3));
    std::fs::write(&path, "{\"preset\": \"desk\"}").unwrap();
    assert_eq!(hnseg(&["describe", "--config", arg(&path)]).status.code(), Some(3));
}

#[test]
fn printed_config_round_trips() {
    for preset in ["desk", "paper"] {
        let out = hnseg(&["describe", "--preset", preset, "--print-config"]);
        assert!(out.status.success());
        let cfg = PipelineConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(cfg, PipelineConfig::preset(preset.parse().unwrap()));
    }
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut cfg = PipelineConfig::desk();
    cfg.network.blocks_down = vec![1, 1];
    cfg.network.init_filters = 2;
    cfg.network.ds_levels = 1;
    cfg.network.patch_size = [16; 3];
    cfg.sampler.patch_size = [16; 3];
    cfg.inference.roi_size = [16; 3];
    cfg.inference.tta = false;
    cfg.train.epochs = 1;
    cfg.train.steps_per_epoch = Some(2);
    let cfg_path = root.join("tiny.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let c = arg(&cfg_path);

    let raw = root.join("raw");
    let out = hnseg(&["phantom", "--count", "3", "--out", arg(&raw), "--config", c]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(raw.join("manifest.json").exists());
    assert!(raw.join("provenance.json").exists());

    let pre = root.join("pre");
    let out = hnseg(&["preprocess", "--input", arg(&raw), "--out", arg(&pre), "--config", c]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pre.join("case_000").join("sidecar.json").exists());

    let model = root.join("model");
    let out = hnseg(&["train", "--data", arg(&pre), "--out", arg(&model), "--config", c]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model.join("last.ckpt");
    assert!(ckpt.exists());
    let prov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(model.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["verb"], "train");
    assert_eq!(prov["config_hash"], cfg.hash());

    let preds = root.join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    let pred = preds.join("case_002.nii.gz");
    let out = hnseg(&[
        "infer",
        "--checkpoints",
        arg(&ckpt),
        "--input",
        arg(&raw.join("case_002")),
        "--out",
        arg(&pred),
        "--config",
        c,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pred.exists());

    let report = root.join("report.csv");
    let out = hnseg(&["evaluate", "--pred-dir", arg(&preds), "--gt-dir", arg(&raw), "--report", arg(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("case,dice_gtvp,dice_gtvn\ncase_002,"));

    let missing = hnseg(&["infer", "--checkpoints", arg(&root.join("nope.ckpt")), "--input", arg(&raw.join("case_002")), "--out", arg(&pred)]);
    assert_eq!(missing.status.code(), Some(1));
}
