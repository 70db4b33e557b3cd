//! Shared fixtures for harness tests: synthetic manifests with a spread of
//! annotator-agreement levels and a fully simulated run configuration.

use std::path::Path;

use super::config::{BackendsConfig, DatasetConfig, RunConfig, StrategyEntry};
use crate::backends::BackendConfig;
use crate::labels::BinningMode;
use crate::prompts::PromptVariant;
use crate::tts::Strategy;

pub(crate) const TEST_CATEGORIES: [&str; 4] =
    ["Neutral state", "Happiness", "Anger", "Sadness"];

/// One manifest row for the `synthetic` dataset.
pub(crate) fn manifest_line(id: &str, transcript: Option<&str>, raters: &[Vec<&str>]) -> String {
    let mut row = serde_json::json!({
        "utterance_id": id,
        "audio_path": format!("audio/{id}.wav"),
        "labels": raters,
        "dataset": "synthetic",
    });
    if let Some(t) = transcript {
        row["transcript"] = serde_json::Value::String(t.to_string());
    }
    format!("{row}\n")
}

/// `n` utterances cycling through five agreement patterns, from unanimous
/// (entropy 0) to a four-way split (entropy 2 bits), with rotating
/// majority categories.
pub(crate) fn write_manifest(path: &Path, n: usize) {
    let c = TEST_CATEGORIES;
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
        let id = format!("u{i:04}");
        let transcript = format!("synthetic utterance number {i}");
        text.push_str(&manifest_line(&id, Some(&transcript), &raters));
    }
    std::fs::write(path, text).unwrap();
}

/// A run over one `synthetic` dataset with simulated generator and
/// verifier backends, default strategy parameters, and jobs = 1.
pub(crate) fn sim_run_config(
    root: &Path,
    strategies: &[Strategy],
    noise_scale: f64,
    seed: u64,
    utterances: usize,
) -> RunConfig {
    let manifest = root.join("manifest.jsonl");
    write_manifest(&manifest, utterances);
    RunConfig {
        seed,
        jobs: 1,
        cache_dir: root.join("cache"),
        output_dir: root.join("out"),
        bin_mode: BinningMode::Quantile,
        datasets: vec![DatasetConfig {
            id: "synthetic".to_string(),
            manifest,
            categories: TEST_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            prompt_variant: PromptVariant::Utterance,
            background: None,
        }],
        backends: BackendsConfig {
            generator: BackendConfig::simulated("sim-alm", noise_scale, 8.0),
            verifier: Some(BackendConfig::simulated("sim-verifier", 0.0, 8.0)),
        },
        strategies: strategies.iter().map(|&s| StrategyEntry::new(s)).collect(),
    }
}
