//! Deterministic evaluation from the candidate cache: replay each
//! strategy's aggregation, compute metrics, and emit the aggregate table,
//! the per-bin table, and a structured run summary. Never touches the
//! network.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::Serialize;

use super::cache::CandidateCache;
use super::config::RunConfig;
use super::generate::{load_datasets, read_failures, DatasetRuntime};
use super::{write_atomic, HarnessError};
use crate::backends::{prompt_digest, BackendConfig, Candidate};
use crate::distributions::EmotionDistribution;
use crate::labels::{fit_binning, BinningMode, EntropyBinning};
use crate::metrics::{
    bin_medians, classification_scores, r_squared, AggregateReport, UtteranceResult,
};
use crate::prompts::PromptKind;
use crate::tts::{self, Strategy, StrategyConfig, TtsError};

/// One row of the flat aggregate table.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub model: String,
    pub strategy: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    pub relative_change: Option<f64>,
}

/// One row of the per-bin table.
#[derive(Debug, Clone)]
pub struct PerBinRow {
    pub model: String,
    pub strategy: String,
    pub dataset: String,
    pub bin: usize,
    pub metric: String,
    pub median: Option<f64>,
    pub count: usize,
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    /// Aggregates over each strategy's own valid utterances.
    pub reports: Vec<AggregateReport>,
    /// Aggregates restricted to utterances valid under every strategy.
    pub intersection_reports: Vec<AggregateReport>,
    pub aggregate_rows: Vec<AggregateRow>,
    pub intersection_rows: Vec<AggregateRow>,
    pub per_bin_rows: Vec<PerBinRow>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct AccountingRow {
    dataset: String,
    strategy: String,
    valid: usize,
    unparseable: usize,
    generation_failures: usize,
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    id: String,
    manifest_rows: usize,
    accepted: usize,
    ingest_rejected: usize,
    bin_boundaries: [f64; 4],
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    model: &'a str,
    seed: u64,
    bin_mode: BinningMode,
    datasets: Vec<DatasetSummary>,
    strategies: &'a [StrategyConfig],
    reports: &'a [AggregateReport],
    intersection_reports: &'a [AggregateReport],
    accounting: &'a [AccountingRow],
}

struct StrategyEval {
    strategy: String,
    results: Vec<UtteranceResult>,
    valid_ids: HashSet<String>,
    unparseable: usize,
    generation_failures: usize,
}

/// Replay one strategy over one dataset from the cache.
fn evaluate_strategy(
    runtime: &DatasetRuntime,
    strategy_config: &StrategyConfig,
    cache: &CandidateCache,
    binning: &EntropyBinning,
    generator: &BackendConfig,
    failed: &HashSet<(String, String, String)>,
    missing_keys: &mut Vec<String>,
) -> Result<StrategyEval, HarnessError> {
    let name = strategy_config.strategy.to_string();
    let kind = if strategy_config.strategy == Strategy::Cot {
        PromptKind::Cot
    } else {
        PromptKind::Base
    };
    let mut eval = StrategyEval {
        strategy: name.clone(),
        results: Vec::new(),
        valid_ids: HashSet::new(),
        unparseable: 0,
        generation_failures: 0,
    };
    for example in &runtime.examples {
        let id = &example.utterance.utterance_id;
        if failed.contains(&(runtime.id.clone(), id.clone(), name.clone())) {
            eval.generation_failures += 1;
            continue;
        }
        // A prompt that cannot be rendered also failed at generation time.
        let Ok(prompt) =
            runtime
                .prompts
                .prediction_prompt(&example.utterance, &runtime.categories, kind)
        else {
            eval.generation_failures += 1;
            continue;
        };
        let digest = prompt_digest(&prompt);
        let keys = super::generate::unit_keys(
            id,
            &digest,
            &generator.model_name,
            &name,
            strategy_config.b,
            generator.sampling_temperature,
        );
        let records: Option<Vec<_>> = keys.iter().map(|k| cache.get(k)).collect();
        let Some(records) = records else {
            missing_keys.extend(keys.into_iter().filter(|k| !cache.contains(k)));
            continue;
        };
        let candidates: Vec<Candidate> = records
            .iter()
            .map(|r| r.to_candidate(&runtime.categories))
            .collect();
        match tts::aggregate(&candidates, strategy_config) {
            Ok(trace) => {
                let bin_index = binning.assign(example.entropy_bits);
                eval.results.push(UtteranceResult::new(
                    id.clone(),
                    example.soft_label.clone(),
                    trace.final_distribution,
                    bin_index,
                )?);
                eval.valid_ids.insert(id.clone());
            }
            Err(TtsError::AllCandidatesUnparseable) => eval.unparseable += 1,
            Err(other) => return Err(other.into()),
        }
    }
    Ok(eval)
}

fn make_report(
    dataset_id: &str,
    model: &str,
    strategy: &str,
    results: &[UtteranceResult],
    manifest_rows: usize,
    k: usize,
) -> AggregateReport {
    let n = results.len();
    let mean = |f: fn(&UtteranceResult) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            results.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let pairs: Vec<(EmotionDistribution, EmotionDistribution)> = results
        .iter()
        .map(|r| (r.ground_truth.clone(), r.prediction.clone()))
        .collect();
    let (accuracy, macro_f1) = classification_scores(results, k);
    AggregateReport {
        dataset_id: dataset_id.to_string(),
        model_name: model.to_string(),
        strategy: strategy.to_string(),
        mean_js: mean(|r| r.js),
        mean_bc: mean(|r| r.bc),
        r2: r_squared(&pairs).ok(),
        accuracy,
        macro_f1,
        valid_rate: n as f64 / manifest_rows as f64,
        per_bin: bin_medians(results),
    }
}

/// Improvement-signed relative change versus the baseline value: JS falls
/// when a strategy helps, every other metric rises, so the sign is flipped
/// for JS to keep "positive = better" throughout.
fn relative_change(metric: &str, new: f64, old: f64) -> Option<f64> {
    if !new.is_finite() || !old.is_finite() || old == 0.0 {
        return None;
    }
    Some(if metric == "mean_js" {
        (old - new) / old
    } else {
        (new - old) / old
    })
}

fn metric_values(report: &AggregateReport) -> [(&'static str, f64); 6] {
    [
        ("mean_js", report.mean_js),
        ("mean_bc", report.mean_bc),
        ("r2", report.r2.unwrap_or(f64::NAN)),
        ("accuracy", report.accuracy),
        ("macro_f1", report.macro_f1),
        ("valid_rate", report.valid_rate),
    ]
}

fn build_rows(reports: &[AggregateReport]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for report in reports {
        let baseline = reports.iter().find(|r| {
            r.dataset_id == report.dataset_id && r.strategy == "baseline"
        });
        for (metric, value) in metric_values(report) {
            let rel = baseline
                .filter(|b| b.strategy != report.strategy)
                .and_then(|b| {
                    let (_, old) = metric_values(b)
                        .into_iter()
                        .find(|(m, _)| *m == metric)
                        .expect("metric present");
                    relative_change(metric, value, old)
                });
            rows.push(AggregateRow {
                model: report.model_name.clone(),
                strategy: report.strategy.clone(),
                dataset: report.dataset_id.clone(),
                metric: metric.to_string(),
                value,
                relative_change: rel,
            });
        }
    }
    rows
}

fn build_per_bin_rows(reports: &[AggregateReport]) -> Vec<PerBinRow> {
    let mut rows = Vec::new();
    for report in reports {
        for bin in &report.per_bin {
            for (metric, median) in [
                ("js", bin.median_js),
                ("bc", bin.median_bc),
                ("r2", bin.r2),
            ] {
                rows.push(PerBinRow {
                    model: report.model_name.clone(),
                    strategy: report.strategy.clone(),
                    dataset: report.dataset_id.clone(),
                    bin: bin.bin_index,
                    metric: metric.to_string(),
                    median,
                    count: bin.count,
                });
            }
        }
    }
    rows
}

fn fmt_value(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.6}")
    } else {
        String::new()
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt_value).unwrap_or_default()
}

fn csv_bytes(header: &[&str], records: Vec<Vec<String>>) -> Result<Vec<u8>, HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for record in records {
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|source| HarnessError::Io {
        path: "<csv buffer>".to_string(),
        source,
    })?;
    writer
        .into_inner()
        .map_err(|e| HarnessError::Io {
            path: "<csv buffer>".to_string(),
            source: std::io::Error::other(e.to_string()),
        })
}

fn aggregate_csv(rows: &[AggregateRow]) -> Result<Vec<u8>, HarnessError> {
    csv_bytes(
        &["model", "strategy", "dataset", "metric", "value", "relative_change"],
        rows.iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.strategy.clone(),
                    r.dataset.clone(),
                    r.metric.clone(),
                    fmt_value(r.value),
                    fmt_opt(r.relative_change),
                ]
            })
            .collect(),
    )
}

fn per_bin_csv(rows: &[PerBinRow]) -> Result<Vec<u8>, HarnessError> {
    csv_bytes(
        &["model", "strategy", "dataset", "bin", "metric", "median", "count"],
        rows.iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.strategy.clone(),
                    r.dataset.clone(),
                    r.bin.to_string(),
                    r.metric.clone(),
                    fmt_opt(r.median),
                    r.count.to_string(),
                ]
            })
            .collect(),
    )
}

/// Evaluate every configured strategy from the cache and write
/// `aggregate.csv`, `aggregate_intersection.csv`, `per_bin.csv`, and
/// `summary.json` to the output directory (atomically).
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateOutcome, HarnessError> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let strategy_configs = config.strategy_configs();
    let cache = CandidateCache::open(&config.cache_dir)?;
    let failed: HashSet<(String, String, String)> = read_failures(&config.output_dir)?
        .into_iter()
        .map(|f| (f.dataset, f.utterance_id, f.strategy))
        .collect();
    let generator = &config.backends.generator;
    let model = &generator.model_name;

    let mut reports = Vec::new();
    let mut intersection_reports = Vec::new();
    let mut accounting = Vec::new();
    let mut dataset_summaries = Vec::new();
    let mut missing_keys = Vec::new();

    for runtime in &datasets {
        let binning = fit_binning(&runtime.examples, config.bin_mode)?;
        let manifest_rows = runtime.examples.len() + runtime.ingest_rejected;
        let k = runtime.categories.len();

        let mut evals = Vec::new();
        for strategy_config in &strategy_configs {
            evals.push(evaluate_strategy(
                runtime,
                strategy_config,
                &cache,
                &binning,
                generator,
                &failed,
                &mut missing_keys,
            )?);
        }
        if !missing_keys.is_empty() {
            return Err(HarnessError::MissingCandidates { keys: missing_keys });
        }

        // Utterances valid under every strategy, for like-for-like
        // cross-strategy comparison.
        let in_all: Vec<String> = runtime
            .examples
            .iter()
            .map(|e| e.utterance.utterance_id.clone())
            .filter(|id| evals.iter().all(|e| e.valid_ids.contains(id)))
            .collect();
        let in_all: HashSet<String> = in_all.into_iter().collect();

        for eval in &evals {
            reports.push(make_report(
                &runtime.id,
                model,
                &eval.strategy,
                &eval.results,
                manifest_rows,
                k,
            ));
            let restricted: Vec<UtteranceResult> = eval
                .results
                .iter()
                .filter(|r| in_all.contains(&r.utterance_id))
                .cloned()
                .collect();
            intersection_reports.push(make_report(
                &runtime.id,
                model,
                &eval.strategy,
                &restricted,
                manifest_rows,
                k,
            ));
            accounting.push(AccountingRow {
                dataset: runtime.id.clone(),
                strategy: eval.strategy.clone(),
                valid: eval.results.len(),
                unparseable: eval.unparseable,
                generation_failures: eval.generation_failures,
            });
        }
        dataset_summaries.push(DatasetSummary {
            id: runtime.id.clone(),
            manifest_rows,
            accepted: runtime.examples.len(),
            ingest_rejected: runtime.ingest_rejected,
            bin_boundaries: binning.boundaries,
        });
    }

    let aggregate_rows = build_rows(&reports);
    let intersection_rows = build_rows(&intersection_reports);
    let per_bin_rows = build_per_bin_rows(&reports);

    let summary = RunSummary {
        model,
        seed: config.seed,
        bin_mode: config.bin_mode,
        datasets: dataset_summaries,
        strategies: &strategy_configs,
        reports: &reports,
        intersection_reports: &intersection_reports,
        accounting: &accounting,
    };
    let mut summary_bytes = serde_json::to_vec_pretty(&summary)?;
    summary_bytes.push(b'\n');

    let out = &config.output_dir;
    let files = vec![
        out.join("aggregate.csv"),
        out.join("aggregate_intersection.csv"),
        out.join("per_bin.csv"),
        out.join("summary.json"),
    ];
    write_atomic(&files[0], &aggregate_csv(&aggregate_rows)?)?;
    write_atomic(&files[1], &aggregate_csv(&intersection_rows)?)?;
    write_atomic(&files[2], &per_bin_csv(&per_bin_rows)?)?;
    write_atomic(&files[3], &summary_bytes)?;
    for file in &files {
        eprintln!("evaluate: wrote {}", file.display());
    }

    Ok(EvaluateOutcome {
        reports,
        intersection_reports,
        aggregate_rows,
        intersection_rows,
        per_bin_rows,
        files,
    })
}
