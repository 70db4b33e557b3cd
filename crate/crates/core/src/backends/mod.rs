//! Candidate generation and verifier scoring against a uniform backend
//! interface, with two implementations: a chat-completions HTTP client and
//! a deterministic simulated backend for offline runs.

mod http;
mod sim;

pub use http::HttpBackend;
pub use sim::{derive_candidate_seed, simulated_generate, SimBackend};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distributions::{CategorySet, EmotionDistribution};
use crate::labels::AnnotatedUtterance;
use crate::parsing::{parse_output, parse_verifier_score};
use crate::prompts::PromptSet;

#[derive(Error, Debug)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("cannot read audio file {path}: {source}")]
    AudioRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("utterance {0} is unknown to the simulated backend")]
    UnknownUtterance(String),
    #[error("backend config invalid: {0}")]
    InvalidConfig(String),
}

/// One model response, before ranking. `log_likelihood` is the cumulative
/// token log-likelihood α_b; candidates whose endpoint returned no
/// log-probabilities carry α = 0 and the `logprobs_missing` flag.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// 1-based rank by descending log-likelihood within the batch.
    pub index: usize,
    pub raw_text: String,
    pub parsed: Option<EmotionDistribution>,
    pub log_likelihood: f64,
    pub verifier_score: Option<f64>,
    pub verifier_fallback: bool,
    pub logprobs_missing: bool,
}

/// A raw backend completion before parsing and ranking.
#[derive(Debug, Clone)]
pub struct RawResponse {
    pub text: String,
    pub log_likelihood: f64,
    pub logprobs_missing: bool,
}

fn default_num_candidates() -> usize {
    1
}
fn default_temperature() -> f64 {
    1.0
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_noise_scale() -> f64 {
    0.35
}
fn default_sharpness() -> f64 {
    8.0
}

/// Connection and sampling parameters for one endpoint. A URL with the
/// `sim:` scheme selects the simulated backend; `noise_scale` and
/// `sharpness` apply only there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token; the
    /// secret itself is never stored.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_num_candidates")]
    pub num_candidates: usize,
    #[serde(default = "default_temperature")]
    pub sampling_temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Divide α_b by the token count before use (off by default: the
    /// aggregation weights cumulative log-likelihoods).
    #[serde(default)]
    pub normalize_loglik: bool,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Audio payload format label; derived from the file extension when
    /// absent.
    #[serde(default)]
    pub audio_format: Option<String>,
}

impl BackendConfig {
    /// A config for the simulated backend, as used by offline tests.
    pub fn simulated(model_name: &str, noise_scale: f64, sharpness: f64) -> Self {
        Self {
            endpoint_url: "sim:".to_string(),
            model_name: model_name.to_string(),
            credential_env: None,
            num_candidates: default_num_candidates(),
            sampling_temperature: default_temperature(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            normalize_loglik: false,
            noise_scale,
            sharpness,
            audio_format: None,
        }
    }

    pub fn is_simulated(&self) -> bool {
        self.endpoint_url.starts_with("sim:")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_candidates < 1 {
            return Err(BackendError::InvalidConfig(
                "num_candidates must be at least 1".to_string(),
            ));
        }
        if !(self.sampling_temperature >= 0.0 && self.sampling_temperature.is_finite()) {
            return Err(BackendError::InvalidConfig(
                "sampling_temperature must be finite and non-negative".to_string(),
            ));
        }
        if self.request_timeout_secs == 0 {
            return Err(BackendError::InvalidConfig(
                "request_timeout_secs must be positive".to_string(),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(BackendError::InvalidConfig(
                "noise_scale must be finite and non-negative".to_string(),
            ));
        }
        if !(self.sharpness >= 0.0 && self.sharpness.is_finite()) {
            return Err(BackendError::InvalidConfig(
                "sharpness must be finite and non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Uniform generation interface. Implementations must be safe for
/// concurrent request issuance.
pub trait Backend: Send + Sync {
    /// Sample `count` completions for a prediction prompt.
    fn sample(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
        count: usize,
    ) -> Result<Vec<RawResponse>, BackendError>;

    /// One completion for a verifier prompt.
    fn complete_one(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
    ) -> Result<String, BackendError>;
}

/// Hex digest identifying a rendered prompt (cache keys, seed derivation).
pub fn prompt_digest(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Sample B candidates, parse each, and rank by descending log-likelihood
/// (stable: ties keep sampling order). Returns exactly
/// `config.num_candidates` candidates or an error.
pub fn generate_candidates(
    utterance: &AnnotatedUtterance,
    prompt: &str,
    backend: &dyn Backend,
    config: &BackendConfig,
    categories: &Arc<CategorySet>,
) -> Result<Vec<Candidate>, BackendError> {
    let responses = backend.sample(utterance, prompt, config.num_candidates)?;
    if responses.len() != config.num_candidates {
        return Err(BackendError::Transport {
            attempts: 1,
            detail: format!(
                "partial batch: wanted {} candidates, got {}",
                config.num_candidates,
                responses.len()
            ),
        });
    }
    let mut candidates: Vec<Candidate> = responses
        .into_iter()
        .map(|response| Candidate {
            index: 0,
            parsed: parse_output(&response.text, categories).distribution,
            raw_text: response.text,
            log_likelihood: response.log_likelihood,
            verifier_score: None,
            verifier_fallback: false,
            logprobs_missing: response.logprobs_missing,
        })
        .collect();
    candidates.sort_by(|a, b| b.log_likelihood.total_cmp(&a.log_likelihood));
    for (rank, candidate) in candidates.iter_mut().enumerate() {
        candidate.index = rank + 1;
    }
    Ok(candidates)
}

/// Send the verifier rubric for one candidate and extract its score. A
/// reply without a number is retried once; a second failure records the
/// mid-rubric fallback score 0.5 and flags the candidate.
pub fn score_with_verifier(
    utterance: &AnnotatedUtterance,
    candidate: &mut Candidate,
    verifier: &dyn Backend,
    prompts: &PromptSet,
    categories: &Arc<CategorySet>,
) -> Result<f64, BackendError> {
    let prompt = prompts.verifier_prompt(&candidate.raw_text, categories);
    for attempt in 0..2 {
        let reply = verifier.complete_one(utterance, &prompt)?;
        match parse_verifier_score(&reply) {
            Ok(score) => {
                candidate.verifier_score = Some(score);
                candidate.verifier_fallback = false;
                return Ok(score);
            }
            Err(_) if attempt == 0 => continue,
            Err(_) => break,
        }
    }
    candidate.verifier_score = Some(0.5);
    candidate.verifier_fallback = true;
    Ok(0.5)
}
