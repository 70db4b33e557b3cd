//! Run orchestration: configuration, the append-only candidate cache,
//! resumable generation, deterministic evaluation, and report rendering.

pub mod cache;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod report;
#[cfg(test)]
pub(crate) mod testutil;

use thiserror::Error;

pub use cache::{cache_key, CacheRecord, CandidateCache};
pub use config::{
    BackendsConfig, DatasetConfig, Overrides, RunConfig, StrategyEntry,
};
pub use evaluate::{cmd_evaluate, AggregateRow, EvaluateOutcome, PerBinRow};
pub use generate::{cmd_generate, FailureRecord, GenerateOutcome};
pub use report::{cmd_parse_test, cmd_report, ParseTestOutcome};

use crate::backends::BackendError;
use crate::distributions::DistributionError;
use crate::labels::LabelError;
use crate::metrics::MetricError;
use crate::prompts::PromptError;
use crate::tts::TtsError;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("cache {path} corrupt at line {line}: {detail}")]
    CacheCorrupt {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("cache is missing {} candidate record(s); first keys: {}", .keys.len(), .keys.iter().take(3).cloned().collect::<Vec<_>>().join(", "))]
    MissingCandidates { keys: Vec<String> },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tts(#[from] TtsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Write `bytes` to `path` atomically: write a sibling temp file, then
/// rename over the target. Interrupted runs never leave partial files.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|source| HarnessError::Io {
        path: tmp.display().to_string(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(io_err)
}
