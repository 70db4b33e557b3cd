//! End-to-end checks of the `emodist` binary.

use std::path::Path;
use std::process::{Command, Output};

const CATEGORIES: [&str; 4] = ["Neutral state", "Happiness", "Anger", "Sadness"];

fn write_manifest(path: &Path, n: usize) {
    let c = CATEGORIES;
    let mut text = String::new();
    for i in 0..n {
        let a = c[i % 4];
        let b = c[(i + 1) % 4];
        let d = c[(i + 2) % 4];
        let e = c[(i + 3) % 4];
        let raters: Vec<Vec<&str>> = match i % 5 {
            0 => vec![vec![a]],
            1 => vec![vec![a], vec![a], vec![b]],
            2 => vec![vec![a], vec![a], vec![b], vec![d]],
            3 => vec![vec![a], vec![b], vec![d]],
            _ => vec![vec![a], vec![b], vec![d], vec![e]],
        };
        let row = serde_json::json!({
            "utterance_id": format!("u{i:04}"),
            "audio_path": format!("audio/u{i:04}.wav"),
            "transcript": format!("synthetic utterance number {i}"),
            "labels": raters,
            "dataset": "synthetic",
        });
        text.push_str(&format!("{row}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn write_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    write_manifest(&dir.join("manifest.jsonl"), 15);
    let config = format!(
        r#"
seed = {seed}
jobs = 1
cache_dir = "cache"
output_dir = "out"

[[datasets]]
id = "synthetic"
manifest = "manifest.jsonl"
categories = ["Neutral state", "Happiness", "Anger", "Sadness"]

[backends.generator]
endpoint_url = "sim:"
model_name = "sim-alm"
noise_scale = 0.4
sharpness = 8.0

[backends.verifier]
endpoint_url = "sim:"
model_name = "sim-verifier"
noise_scale = 0.0
sharpness = 8.0

[[strategies]]
name = "baseline"

[[strategies]]
name = "w-bon"

[[strategies]]
name = "w-alm-v"
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn emodist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emodist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

#[test]
fn full_pipeline_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 42);
    let config = config.to_str().unwrap();

    let gen = emodist(&["generate", "--config", config]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert!(stdout(&gen).contains("45 unit(s)"), "{}", stdout(&gen));
    assert!(dir.path().join("cache/candidates.jsonl").exists());

    let eval = emodist(&["evaluate", "--config", config]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    for name in [
        "aggregate.csv",
        "aggregate_intersection.csv",
        "per_bin.csv",
        "summary.json",
    ] {
        assert!(dir.path().join("out").join(name).exists(), "{name} missing");
    }
    let aggregate = std::fs::read_to_string(dir.path().join("out/aggregate.csv")).unwrap();
    assert!(aggregate.starts_with("model,strategy,dataset,metric,value,relative_change"));
    assert!(aggregate.contains("sim-alm,w-bon,synthetic,mean_js,"));

    let per_bin = std::fs::read_to_string(dir.path().join("out/per_bin.csv")).unwrap();
    assert!(per_bin.starts_with("model,strategy,dataset,bin,metric,median,count"));

    let report = emodist(&["report", "--config", config]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = stdout(&report);
    assert!(text.contains("== sim-alm on synthetic =="));
    assert!(text.contains("w-alm-v"));
}

#[test]
fn repeat_generate_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 7);
    let config = config.to_str().unwrap();
    assert!(emodist(&["generate", "--config", config]).status.success());
    let rerun = emodist(&["generate", "--config", config]);
    assert!(rerun.status.success());
    assert!(
        stdout(&rerun).contains("generated 0 unit(s), 45 cache hit(s)"),
        "{}",
        stdout(&rerun)
    );
}

#[test]
fn reports_identical_across_job_counts() {
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), 11);
        let config = config.to_str().unwrap();
        assert!(emodist(&["generate", "--config", config, "--jobs", jobs])
            .status
            .success());
        assert!(emodist(&["evaluate", "--config", config]).status.success());
        outputs.push((
            std::fs::read(dir.path().join("out/aggregate.csv")).unwrap(),
            std::fs::read(dir.path().join("out/per_bin.csv")).unwrap(),
            std::fs::read(dir.path().join("out/summary.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn strategy_flag_narrows_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let config = config.to_str().unwrap();
    let gen = emodist(&[
        "generate",
        "--config",
        config,
        "--strategy",
        "baseline",
        "--strategy",
        "bon",
    ]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert!(stdout(&gen).contains("30 unit(s)"), "{}", stdout(&gen));

    let eval = emodist(&["evaluate", "--config", config, "--strategy", "baseline"]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let aggregate = std::fs::read_to_string(dir.path().join("out/aggregate.csv")).unwrap();
    assert!(aggregate.contains("baseline"));
    assert!(!aggregate.contains("w-bon"));
}

#[test]
fn bin_mode_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 5);
    let config = config.to_str().unwrap();
    assert!(emodist(&["generate", "--config", config]).status.success());
    let eval = emodist(&["evaluate", "--config", config, "--bin-mode", "equal-width"]);
    assert!(eval.status.success(), "{}", stderr(&eval));

    let bad = emodist(&["evaluate", "--config", config, "--bin-mode", "logarithmic"]);
    assert!(!bad.status.success());
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 5);
    let config = config.to_str().unwrap();

    let unknown_dataset = emodist(&["generate", "--config", config, "--dataset", "nope"]);
    assert_eq!(unknown_dataset.status.code(), Some(2));
    assert!(stderr(&unknown_dataset).contains("unknown dataset"));

    let unknown_strategy = emodist(&["generate", "--config", config, "--strategy", "best-of-two"]);
    assert_eq!(unknown_strategy.status.code(), Some(2));

    let missing_cache = emodist(&["evaluate", "--config", config, "--strategy", "cot"]);
    assert_eq!(missing_cache.status.code(), Some(1));
    assert!(stderr(&missing_cache).contains("missing"));
}

#[test]
fn parse_test_prints_outcome_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 5);
    let outputs = dir.path().join("outputs.txt");
    std::fs::write(
        &outputs,
        "{\"Anger\": 0.6, \"Sadness\": 0.4}\nnot parseable\n",
    )
    .unwrap();
    let out = emodist(&[
        "parse-test",
        "--config",
        config.to_str().unwrap(),
        outputs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("json-dict"));
    assert!(text.contains("rejected"));
    assert!(text.contains("1/2"));
}
