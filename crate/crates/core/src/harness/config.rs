//! Run configuration: a single human-editable TOML document plus CLI
//! overrides. Credentials are referenced by environment-variable name only.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backends::BackendConfig;
use crate::distributions::CategorySet;
use crate::labels::BinningMode;
use crate::prompts::PromptVariant;
use crate::tts::{Strategy, StrategyConfig, WeightTransform};

/// One dataset: a manifest of annotated utterances plus its category set
/// and prompt wording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    pub manifest: PathBuf,
    pub categories: Vec<String>,
    #[serde(default)]
    pub prompt_variant: PromptVariant,
    /// Optional background line replacing the conversational default.
    #[serde(default)]
    pub background: Option<String>,
}

impl DatasetConfig {
    pub fn category_set(&self) -> Result<Arc<CategorySet>, HarnessError> {
        Ok(CategorySet::new(self.categories.clone())?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendsConfig {
    pub generator: BackendConfig,
    #[serde(default)]
    pub verifier: Option<BackendConfig>,
}

/// One strategy row in the config. Omitted fields take the strategy's
/// defaults (B = 5 for bon/w-bon, B = 3 for the verifier strategies,
/// τ = 1, softmax weighting).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub name: Strategy,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub weight_transform: Option<WeightTransform>,
}

impl StrategyEntry {
    pub fn new(name: Strategy) -> Self {
        Self {
            name,
            b: None,
            tau: None,
            weight_transform: None,
        }
    }

    pub fn to_config(&self) -> StrategyConfig {
        let mut config = StrategyConfig::new(self.name);
        if let Some(b) = self.b {
            config.b = b;
        }
        if let Some(tau) = self.tau {
            config.tau = tau;
        }
        if let Some(transform) = self.weight_transform {
            config.weight_transform = transform;
        }
        config
    }
}

fn default_jobs() -> usize {
    1
}

/// Full run description. Paths are resolved relative to the config file's
/// directory at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub bin_mode: BinningMode,
    pub datasets: Vec<DatasetConfig>,
    pub backends: BackendsConfig,
    #[serde(default)]
    pub strategies: Vec<StrategyEntry>,
}

/// CLI-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategies: Vec<Strategy>,
    pub dataset: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub bin_mode: Option<BinningMode>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|source| HarnessError::ConfigParse {
                path: path.display().to_string(),
                source: Box::new(source),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.cache_dir = resolve(base, &config.cache_dir);
        config.output_dir = resolve(base, &config.output_dir);
        for dataset in &mut config.datasets {
            dataset.manifest = resolve(base, &dataset.manifest);
        }
        Ok(config)
    }

    /// Apply CLI overrides. `--strategy` keeps the matching configured
    /// entry when one exists and otherwise adds a default entry;
    /// `--dataset` narrows the run to one dataset.
    pub fn apply(&mut self, overrides: &Overrides) -> Result<(), HarnessError> {
        if !overrides.strategies.is_empty() {
            self.strategies = overrides
                .strategies
                .iter()
                .map(|&name| {
                    self.strategies
                        .iter()
                        .find(|e| e.name == name)
                        .cloned()
                        .unwrap_or_else(|| StrategyEntry::new(name))
                })
                .collect();
        }
        if let Some(id) = &overrides.dataset {
            if !self.datasets.iter().any(|d| &d.id == id) {
                return Err(HarnessError::Usage(format!("unknown dataset: {id}")));
            }
            self.datasets.retain(|d| &d.id == id);
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            self.jobs = jobs;
        }
        if let Some(bin_mode) = overrides.bin_mode {
            self.bin_mode = bin_mode;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.strategies.is_empty() {
            return Err(HarnessError::Usage(
                "no strategies selected; configure [[strategies]] or pass --strategy".to_string(),
            ));
        }
        if self.datasets.is_empty() {
            return Err(HarnessError::InvalidConfig("no datasets configured".to_string()));
        }
        if self.jobs == 0 {
            return Err(HarnessError::InvalidConfig("jobs must be at least 1".to_string()));
        }
        let mut dataset_ids = std::collections::HashSet::new();
        for dataset in &self.datasets {
            if dataset.id.trim().is_empty() {
                return Err(HarnessError::InvalidConfig("empty dataset id".to_string()));
            }
            if !dataset_ids.insert(dataset.id.as_str()) {
                return Err(HarnessError::InvalidConfig(format!(
                    "duplicate dataset id: {}",
                    dataset.id
                )));
            }
            dataset.category_set()?;
        }
        let mut strategy_names = std::collections::HashSet::new();
        for entry in &self.strategies {
            if !strategy_names.insert(entry.name) {
                return Err(HarnessError::InvalidConfig(format!(
                    "strategy {} listed twice",
                    entry.name
                )));
            }
            entry.to_config().validate()?;
        }
        self.backends.generator.validate()?;
        if let Some(verifier) = &self.backends.verifier {
            verifier.validate()?;
        }
        let needs_verifier = self
            .strategies
            .iter()
            .find(|e| e.name.needs_verifier());
        if let (Some(entry), None) = (needs_verifier, &self.backends.verifier) {
            return Err(HarnessError::InvalidConfig(format!(
                "strategy {} requires a [backends.verifier] entry",
                entry.name
            )));
        }
        Ok(())
    }

    pub fn strategy_configs(&self) -> Vec<StrategyConfig> {
        self.strategies.iter().map(StrategyEntry::to_config).collect()
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
