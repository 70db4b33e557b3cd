//! Deterministic simulated backend: perturbs ground-truth soft labels with
//! seeded noise so the full pipeline runs offline with known answers.
//!
//! Candidate quality drives the scores: `log_likelihood = -js(sampled,
//! truth) * sharpness`, and the simulated verifier replies
//! `1 - js(candidate, truth)`, so better candidates receive higher α and
//! higher verifier scores.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::distributions::{CategorySet, EmotionDistribution};
use crate::labels::AnnotatedUtterance;
use crate::metrics::js_divergence;
use crate::parsing::parse_output;

use super::{Backend, BackendError, Candidate, RawResponse};

/// Derive the per-candidate RNG seed. The strategy is deliberately absent:
/// two strategies issuing the same prompt for the same utterance must see
/// the same candidates, which is what makes B = 1 search strategies
/// byte-identical to the baseline.
pub fn derive_candidate_seed(
    global_seed: u64,
    utterance_id: &str,
    prompt_digest: &str,
    candidate_index: usize,
) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(utterance_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt_digest.as_bytes());
    hasher.update([0u8]);
    hasher.update((candidate_index as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// One simulated candidate: ground truth plus i.i.d. Normal(0, noise_scale)
/// noise per component, clamped at 0 and renormalized. The raw text is the
/// JSON dictionary the base prompt demands.
pub fn simulated_generate(
    ground_truth: &EmotionDistribution,
    noise_scale: f64,
    sharpness: f64,
    seed: u64,
) -> Candidate {
    let sampled = if noise_scale == 0.0 {
        ground_truth.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_scale).expect("validated noise scale");
        loop {
            let perturbed: Vec<f64> = ground_truth
                .probs()
                .iter()
                .map(|p| (p + normal.sample(&mut rng)).max(0.0))
                .collect();
            // All-mass-clamped draws are resampled; the loop terminates with
            // probability 1 since each draw has positive success chance.
            if let Ok(d) = EmotionDistribution::normalize(&perturbed, ground_truth.categories()) {
                break d;
            }
        }
    };
    let js = js_divergence(&sampled, ground_truth).expect("same category set");
    let raw_text = render_json(&sampled);
    Candidate {
        index: 1,
        parsed: Some(sampled),
        raw_text,
        log_likelihood: -js * sharpness,
        verifier_score: None,
        verifier_fallback: false,
        logprobs_missing: false,
    }
}

/// Serialize a distribution as the prompt's JSON structure, preserving
/// category order and exact float round-tripping.
fn render_json(distribution: &EmotionDistribution) -> String {
    let fields: Vec<String> = distribution
        .categories()
        .names()
        .iter()
        .zip(distribution.probs())
        .map(|(name, p)| {
            format!(
                "{}: {}",
                serde_json::to_string(name).expect("strings serialize"),
                serde_json::to_string(p).expect("finite floats serialize")
            )
        })
        .collect();
    format!("{{{}}}", fields.join(", "))
}

/// Offline backend over a fixed ground-truth table.
pub struct SimBackend {
    ground_truth: HashMap<String, EmotionDistribution>,
    categories: Arc<CategorySet>,
    noise_scale: f64,
    sharpness: f64,
    global_seed: u64,
}

impl SimBackend {
    pub fn new(
        ground_truth: HashMap<String, EmotionDistribution>,
        categories: Arc<CategorySet>,
        noise_scale: f64,
        sharpness: f64,
        global_seed: u64,
    ) -> Self {
        Self {
            ground_truth,
            categories,
            noise_scale,
            sharpness,
            global_seed,
        }
    }

    fn truth_for(&self, utterance_id: &str) -> Result<&EmotionDistribution, BackendError> {
        self.ground_truth
            .get(utterance_id)
            .ok_or_else(|| BackendError::UnknownUtterance(utterance_id.to_string()))
    }
}

impl Backend for SimBackend {
    fn sample(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
        count: usize,
    ) -> Result<Vec<RawResponse>, BackendError> {
        let truth = self.truth_for(&utterance.utterance_id)?;
        let digest = super::prompt_digest(prompt);
        Ok((0..count)
            .map(|i| {
                let seed =
                    derive_candidate_seed(self.global_seed, &utterance.utterance_id, &digest, i);
                let candidate =
                    simulated_generate(truth, self.noise_scale, self.sharpness, seed);
                RawResponse {
                    text: candidate.raw_text,
                    log_likelihood: candidate.log_likelihood,
                    logprobs_missing: false,
                }
            })
            .collect())
    }

    /// Score the candidate embedded in the verifier prompt's Model Output
    /// section as `1 - js(candidate, truth)`; unparseable candidates score
    /// 0. Scoring is a pure function, hence trivially deterministic.
    fn complete_one(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
    ) -> Result<String, BackendError> {
        let truth = self.truth_for(&utterance.utterance_id)?;
        let model_output = extract_model_output(prompt);
        let score = match parse_output(model_output, &self.categories).distribution {
            Some(candidate) => 1.0 - js_divergence(&candidate, truth).expect("same category set"),
            None => 0.0,
        };
        Ok(format!("{score}"))
    }
}

/// The candidate text sits between the Model Output header and the Task
/// section of the default verifier template.
fn extract_model_output(prompt: &str) -> &str {
    let Some(start) = prompt.find("Model Output\n") else {
        return prompt;
    };
    let rest = &prompt[start + "Model Output\n".len()..];
    match rest.find("\n\nTask\n") {
        Some(end) => &rest[..end],
        None => rest,
    }
}
