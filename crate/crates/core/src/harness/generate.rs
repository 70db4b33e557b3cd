//! Resumable candidate generation. Work fans out across utterances up to
//! the configured job limit; cache writes are serialized through a single
//! writer that replays completions in task order, so cache contents are
//! byte-identical regardless of concurrency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, CacheRecord, CandidateCache};
use super::config::RunConfig;
use super::HarnessError;
use crate::backends::{
    generate_candidates, prompt_digest, score_with_verifier, Backend, BackendConfig,
    HttpBackend, SimBackend,
};
use crate::distributions::{CategorySet, EmotionDistribution};
use crate::labels::{build_examples, ingest_manifest, LabeledExample};
use crate::prompts::{PromptKind, PromptSet};
use crate::tts::{Strategy, StrategyConfig};

/// One utterance × strategy that could not be generated. Recorded, never
/// fatal; evaluation counts these utterances as invalid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Hash)]
pub struct FailureRecord {
    pub dataset: String,
    pub utterance_id: String,
    pub strategy: String,
    pub error: String,
}

#[derive(Debug)]
pub struct GenerateOutcome {
    /// Work units examined (utterance × strategy across all datasets).
    pub units: usize,
    /// Units already fully present in the cache.
    pub cache_hits: usize,
    /// Units generated this run.
    pub generated: usize,
    /// Records newly appended to the log.
    pub new_records: usize,
    pub failures: Vec<FailureRecord>,
    /// Manifest rows rejected at ingestion, summed over datasets.
    pub ingest_rejected: usize,
}

/// Everything a dataset contributes to generation and evaluation.
pub(crate) struct DatasetRuntime {
    pub id: String,
    pub categories: Arc<CategorySet>,
    pub examples: Vec<LabeledExample>,
    pub prompts: PromptSet,
    pub ingest_rejected: usize,
}

pub(crate) fn load_datasets(config: &RunConfig) -> Result<Vec<DatasetRuntime>, HarnessError> {
    config
        .datasets
        .iter()
        .map(|dataset| {
            let categories = dataset.category_set()?;
            let outcome = ingest_manifest(&dataset.manifest, &dataset.id, &categories)?;
            let ingest_rejected = outcome.rejected_count();
            let examples = build_examples(outcome.utterances, &categories)?;
            let mut prompts = PromptSet::defaults(dataset.prompt_variant);
            if let Some(background) = &dataset.background {
                prompts = prompts.with_background(background);
            }
            Ok(DatasetRuntime {
                id: dataset.id.clone(),
                categories,
                examples,
                prompts,
                ingest_rejected,
            })
        })
        .collect()
}

/// Build the backend for one dataset. The simulated backend needs the
/// dataset's ground-truth table; HTTP backends are stateless and shared.
pub(crate) fn build_backend(
    backend_config: &BackendConfig,
    runtime: &DatasetRuntime,
    seed: u64,
    shared_http: &mut Option<Arc<dyn Backend>>,
) -> Result<Arc<dyn Backend>, HarnessError> {
    if backend_config.is_simulated() {
        let table: HashMap<String, EmotionDistribution> = runtime
            .examples
            .iter()
            .map(|e| (e.utterance.utterance_id.clone(), e.soft_label.clone()))
            .collect();
        Ok(Arc::new(SimBackend::new(
            table,
            Arc::clone(&runtime.categories),
            backend_config.noise_scale,
            backend_config.sharpness,
            seed,
        )))
    } else {
        if shared_http.is_none() {
            *shared_http = Some(Arc::new(HttpBackend::new(backend_config.clone())?));
        }
        Ok(Arc::clone(shared_http.as_ref().unwrap()))
    }
}

struct WorkUnit {
    dataset_idx: usize,
    example_idx: usize,
    strategy_idx: usize,
}

enum UnitOutcome {
    Hit,
    Generated(Vec<CacheRecord>),
    Failed(FailureRecord),
}

struct GenContext {
    datasets: Vec<DatasetRuntime>,
    generators: Vec<Arc<dyn Backend>>,
    verifiers: Vec<Option<Arc<dyn Backend>>>,
    strategy_configs: Vec<StrategyConfig>,
    generator_config: BackendConfig,
    known_keys: HashSet<String>,
    created_at: u64,
}

/// The candidate keys one unit must fill.
pub(crate) fn unit_keys(
    utterance_id: &str,
    digest: &str,
    model: &str,
    strategy: &str,
    b: usize,
    temperature: f64,
) -> Vec<String> {
    (1..=b)
        .map(|index| cache_key(utterance_id, digest, model, strategy, b, temperature, index))
        .collect()
}

fn try_unit(ctx: &GenContext, unit: &WorkUnit) -> Result<Option<Vec<CacheRecord>>, HarnessError> {
    let dataset = &ctx.datasets[unit.dataset_idx];
    let example = &dataset.examples[unit.example_idx];
    let strategy_config = &ctx.strategy_configs[unit.strategy_idx];
    let strategy_name = strategy_config.strategy.to_string();

    let kind = if strategy_config.strategy == Strategy::Cot {
        PromptKind::Cot
    } else {
        PromptKind::Base
    };
    let prompt = dataset
        .prompts
        .prediction_prompt(&example.utterance, &dataset.categories, kind)?;
    let digest = prompt_digest(&prompt);
    let keys = unit_keys(
        &example.utterance.utterance_id,
        &digest,
        &ctx.generator_config.model_name,
        &strategy_name,
        strategy_config.b,
        ctx.generator_config.sampling_temperature,
    );
    if keys.iter().all(|k| ctx.known_keys.contains(k)) {
        return Ok(None);
    }

    let mut generator_config = ctx.generator_config.clone();
    generator_config.num_candidates = strategy_config.b;
    let mut candidates = generate_candidates(
        &example.utterance,
        &prompt,
        ctx.generators[unit.dataset_idx].as_ref(),
        &generator_config,
        &dataset.categories,
    )?;
    if strategy_config.strategy.needs_verifier() {
        let verifier = ctx.verifiers[unit.dataset_idx]
            .as_ref()
            .ok_or_else(|| HarnessError::InvalidConfig(format!(
                "strategy {strategy_name} requires a verifier backend"
            )))?;
        for candidate in candidates.iter_mut() {
            score_with_verifier(
                &example.utterance,
                candidate,
                verifier.as_ref(),
                &dataset.prompts,
                &dataset.categories,
            )?;
        }
    }

    Ok(Some(
        candidates
            .into_iter()
            .map(|c| CacheRecord {
                key: keys[c.index - 1].clone(),
                utterance_id: example.utterance.utterance_id.clone(),
                prompt_digest: digest.clone(),
                model: ctx.generator_config.model_name.clone(),
                strategy: strategy_name.clone(),
                b: strategy_config.b,
                temperature: ctx.generator_config.sampling_temperature,
                candidate_index: c.index,
                raw_text: c.raw_text,
                log_likelihood: c.log_likelihood,
                logprobs_missing: c.logprobs_missing,
                verifier_score: c.verifier_score,
                verifier_fallback: c.verifier_fallback,
                created_at: ctx.created_at,
            })
            .collect(),
    ))
}

fn run_unit(ctx: &GenContext, unit: &WorkUnit) -> UnitOutcome {
    match try_unit(ctx, unit) {
        Ok(Some(records)) => UnitOutcome::Generated(records),
        Ok(None) => UnitOutcome::Hit,
        Err(err) => {
            let dataset = &ctx.datasets[unit.dataset_idx];
            UnitOutcome::Failed(FailureRecord {
                dataset: dataset.id.clone(),
                utterance_id: dataset.examples[unit.example_idx]
                    .utterance
                    .utterance_id
                    .clone(),
                strategy: ctx.strategy_configs[unit.strategy_idx].strategy.to_string(),
                error: err.to_string(),
            })
        }
    }
}

/// Populate the candidate cache for every utterance × strategy. Cache hits
/// are skipped; per-utterance failures are recorded and skipped, never
/// aborting the batch; interrupted runs resume from the cache.
pub fn cmd_generate(config: &RunConfig) -> Result<GenerateOutcome, HarnessError> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let strategy_configs = config.strategy_configs();

    let mut shared_http_gen: Option<Arc<dyn Backend>> = None;
    let mut shared_http_ver: Option<Arc<dyn Backend>> = None;
    let mut generators = Vec::new();
    let mut verifiers = Vec::new();
    for runtime in &datasets {
        generators.push(build_backend(
            &config.backends.generator,
            runtime,
            config.seed,
            &mut shared_http_gen,
        )?);
        verifiers.push(match &config.backends.verifier {
            Some(vc) => Some(build_backend(vc, runtime, config.seed, &mut shared_http_ver)?),
            None => None,
        });
    }

    let mut cache = CandidateCache::open(&config.cache_dir)?;
    let created_at = if config.backends.generator.is_simulated() {
        0
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs()
    };

    let ctx = GenContext {
        known_keys: cache.key_snapshot(),
        datasets,
        generators,
        verifiers,
        strategy_configs,
        generator_config: config.backends.generator.clone(),
        created_at,
    };

    let mut units = Vec::new();
    for (dataset_idx, dataset) in ctx.datasets.iter().enumerate() {
        for example_idx in 0..dataset.examples.len() {
            for strategy_idx in 0..ctx.strategy_configs.len() {
                units.push(WorkUnit {
                    dataset_idx,
                    example_idx,
                    strategy_idx,
                });
            }
        }
    }

    let mut outcome = GenerateOutcome {
        units: units.len(),
        cache_hits: 0,
        generated: 0,
        new_records: 0,
        failures: Vec::new(),
        ingest_rejected: ctx.datasets.iter().map(|d| d.ingest_rejected).sum(),
    };

    let jobs = config.jobs.min(units.len()).max(1);
    let next_task = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, UnitOutcome)>();

    std::thread::scope(|scope| -> Result<(), HarnessError> {
        let ctx_ref = &ctx;
        let units_ref = &units;
        let next_ref = &next_task;
        for _ in 0..jobs {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let i = next_ref.fetch_add(1, Ordering::Relaxed);
                if i >= units_ref.len() {
                    break;
                }
                if tx.send((i, run_unit(ctx_ref, &units_ref[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: replay completions strictly in task order so the
        // record log is independent of scheduling.
        let mut pending: BTreeMap<usize, UnitOutcome> = BTreeMap::new();
        let mut next_write = 0usize;
        for (seq, unit_outcome) in rx {
            pending.insert(seq, unit_outcome);
            while let Some(ready) = pending.remove(&next_write) {
                match ready {
                    UnitOutcome::Hit => outcome.cache_hits += 1,
                    UnitOutcome::Generated(records) => {
                        outcome.generated += 1;
                        outcome.new_records += cache.append_all(records)?;
                    }
                    UnitOutcome::Failed(failure) => outcome.failures.push(failure),
                }
                next_write += 1;
            }
        }
        Ok(())
    })?;

    write_failures(&config.output_dir, &outcome.failures)?;
    eprintln!(
        "generate: {} units, {} cache hits, {} generated ({} new records), {} failures",
        outcome.units,
        outcome.cache_hits,
        outcome.generated,
        outcome.new_records,
        outcome.failures.len()
    );
    Ok(outcome)
}

/// Failure log path; evaluation reads it to distinguish skipped utterances
/// from an unpopulated cache.
pub(crate) fn failures_path(output_dir: &Path) -> std::path::PathBuf {
    output_dir.join("failures.jsonl")
}

fn write_failures(output_dir: &Path, failures: &[FailureRecord]) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    for failure in failures {
        serde_json::to_writer(&mut buf, failure)?;
        buf.push(b'\n');
    }
    super::write_atomic(&failures_path(output_dir), &buf)
}

pub(crate) fn read_failures(output_dir: &Path) -> Result<Vec<FailureRecord>, HarnessError> {
    let path = failures_path(output_dir);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::Json))
        .collect()
}
