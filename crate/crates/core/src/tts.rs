//! Test-time scaling strategies: baseline, chain-of-thought, Best-of-N,
//! weighted Best-of-N (softmax-of-α weights feeding a Dirichlet mixture),
//! and their verifier-scored counterparts.
//!
//! Weighted aggregation follows the two-step construction: candidate
//! distributions become Dirichlet components with concentration τ·p̂^(b),
//! weighted by softmax of the candidate scores; the expected aggregated
//! distribution under that mixture is the weighted sum of Dirichlet means,
//! which is τ-invariant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    generate_candidates, score_with_verifier, Backend, BackendConfig, BackendError, Candidate,
};
use crate::distributions::{CategorySet, DistributionError, EmotionDistribution};
use crate::labels::AnnotatedUtterance;
use crate::prompts::{PromptError, PromptKind, PromptSet};

#[derive(Error, Debug)]
pub enum TtsError {
    #[error("no finite scores to weight")]
    NoFiniteScores,
    #[error("cannot aggregate an empty candidate set")]
    EmptyCandidateSet,
    #[error("no candidate produced a parseable distribution")]
    AllCandidatesUnparseable,
    #[error("candidate {0} has no parsed distribution")]
    UnparsedCandidate(usize),
    #[error("{0} candidates but {1} weights")]
    WeightMismatch(usize, usize),
    #[error("strategy {0} requires a verifier backend")]
    MissingVerifier(String),
    #[error("unknown strategy name: {0}")]
    UnknownStrategy(String),
    #[error("invalid strategy config: {0}")]
    InvalidStrategyConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Baseline,
    Cot,
    Bon,
    WBon,
    AlmV,
    WAlmV,
}

impl Strategy {
    pub fn all() -> [Strategy; 6] {
        [
            Strategy::Baseline,
            Strategy::Cot,
            Strategy::Bon,
            Strategy::WBon,
            Strategy::AlmV,
            Strategy::WAlmV,
        ]
    }

    /// Search strategies sample several candidates; baseline and cot take
    /// exactly one.
    pub fn is_search(self) -> bool {
        !matches!(self, Strategy::Baseline | Strategy::Cot)
    }

    pub fn needs_verifier(self) -> bool {
        matches!(self, Strategy::AlmV | Strategy::WAlmV)
    }

    /// Selection strategies pick one candidate; weighted strategies blend.
    pub fn is_selection(self) -> bool {
        matches!(self, Strategy::Bon | Strategy::AlmV)
    }

    pub fn default_b(self) -> usize {
        match self {
            Strategy::Baseline | Strategy::Cot => 1,
            Strategy::Bon | Strategy::WBon => 5,
            Strategy::AlmV | Strategy::WAlmV => 3,
        }
    }

    fn implied_source(self) -> WeightSource {
        match self {
            Strategy::AlmV | Strategy::WAlmV => WeightSource::Verifier,
            _ => WeightSource::LogLik,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Baseline => "baseline",
            Strategy::Cot => "cot",
            Strategy::Bon => "bon",
            Strategy::WBon => "w-bon",
            Strategy::AlmV => "alm-v",
            Strategy::WAlmV => "w-alm-v",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = TtsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "cot" => Ok(Strategy::Cot),
            "bon" => Ok(Strategy::Bon),
            "w-bon" => Ok(Strategy::WBon),
            "alm-v" => Ok(Strategy::AlmV),
            "w-alm-v" => Ok(Strategy::WAlmV),
            other => Err(TtsError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Which per-candidate score drives selection or weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    #[serde(rename = "loglik")]
    LogLik,
    #[serde(rename = "verifier")]
    Verifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightTransform {
    #[default]
    Softmax,
    DirectNormalize,
}

/// Full parameterization of one strategy run. Defaults follow the reported
/// setup: B = 5 for bon/w-bon, B = 3 for the verifier strategies, τ = 1,
/// softmax weighting.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub b: usize,
    pub tau: f64,
    pub weight_source: WeightSource,
    pub weight_transform: WeightTransform,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            b: strategy.default_b(),
            tau: 1.0,
            weight_source: strategy.implied_source(),
            weight_transform: WeightTransform::Softmax,
        }
    }

    pub fn with_b(mut self, b: usize) -> Self {
        self.b = b;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_transform(mut self, transform: WeightTransform) -> Self {
        self.weight_transform = transform;
        self
    }

    /// Baseline and cot take exactly one candidate. Search strategies
    /// accept B in [1, 7]: the reported sweep covers [2, 7], and B = 1 is
    /// kept because it must reduce exactly to the baseline.
    pub fn validate(&self) -> Result<(), TtsError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TtsError::InvalidStrategyConfig(
                "tau must be positive and finite".to_string(),
            ));
        }
        if !self.strategy.is_search() && self.b != 1 {
            return Err(TtsError::InvalidStrategyConfig(format!(
                "{} uses exactly one candidate, got B = {}",
                self.strategy, self.b
            )));
        }
        if self.strategy.is_search() && !(1..=7).contains(&self.b) {
            return Err(TtsError::InvalidStrategyConfig(format!(
                "B must be in [1, 7], got {}",
                self.b
            )));
        }
        if self.strategy.is_search() && self.weight_source != self.strategy.implied_source() {
            return Err(TtsError::InvalidStrategyConfig(format!(
                "{} weights by {:?} scores",
                self.strategy,
                self.strategy.implied_source()
            )));
        }
        Ok(())
    }
}

/// Everything one aggregation saw: the ranked candidates, the weight each
/// received (0 for dropped/unselected ones), the selected candidate index
/// for selection strategies, and the final distribution.
#[derive(Debug, Clone)]
pub struct AggregationTrace {
    pub candidates: Vec<Candidate>,
    pub weights: Vec<f64>,
    pub selected_index: Option<usize>,
    pub final_distribution: EmotionDistribution,
}

/// Backends and prompts one strategy execution runs against.
pub struct StrategyContext<'a> {
    pub generator: &'a dyn Backend,
    pub verifier: Option<&'a dyn Backend>,
    pub generator_config: &'a BackendConfig,
    pub prompts: &'a PromptSet,
    pub categories: &'a Arc<CategorySet>,
}

/// w_b = exp(α_b − max α) / Σ_j exp(α_j − max α). The max shift changes
/// nothing mathematically and keeps exp() in range for any score scale.
pub fn softmax_weights(alphas: &[f64]) -> Result<Vec<f64>, TtsError> {
    let max = alphas
        .iter()
        .copied()
        .filter(|a| a.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TtsError::NoFiniteScores);
    }
    let exps: Vec<f64> = alphas
        .iter()
        .map(|a| if a.is_finite() { (a - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Σ_b w_b · mean(Dirichlet(τ·p̂^(b))). The Dirichlet mean is
/// (τ·p̂_k)/(Σ_j τ·p̂_j), so the result equals the plain weighted sum of
/// candidate distributions for every τ > 0. A single candidate with weight
/// 1 passes through bit-exactly.
pub fn aggregate_dmm(
    candidates: &[&Candidate],
    weights: &[f64],
    tau: f64,
) -> Result<EmotionDistribution, TtsError> {
    if candidates.is_empty() {
        return Err(TtsError::EmptyCandidateSet);
    }
    if candidates.len() != weights.len() {
        return Err(TtsError::WeightMismatch(candidates.len(), weights.len()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(TtsError::InvalidStrategyConfig(
            "tau must be positive and finite".to_string(),
        ));
    }
    let dists: Vec<&EmotionDistribution> = candidates
        .iter()
        .map(|c| {
            c.parsed
                .as_ref()
                .ok_or(TtsError::UnparsedCandidate(c.index))
        })
        .collect::<Result<_, _>>()?;
    if dists.len() == 1 {
        return Ok(dists[0].clone());
    }
    let mut acc = vec![0.0f64; dists[0].len()];
    for (d, w) in dists.iter().zip(weights) {
        let beta: Vec<f64> = d.probs().iter().map(|p| tau * p).collect();
        let beta_sum: f64 = beta.iter().sum();
        for (a, b) in acc.iter_mut().zip(&beta) {
            *a += w * (b / beta_sum);
        }
    }
    Ok(EmotionDistribution::new(
        acc,
        Arc::clone(dists[0].categories()),
    )?)
}

/// Argmax of the chosen score over parseable candidates; ties break toward
/// the lower candidate index.
pub fn select_best(
    candidates: &[Candidate],
    source: WeightSource,
) -> Result<AggregationTrace, TtsError> {
    let mut best: Option<(usize, f64)> = None;
    for (pos, candidate) in candidates.iter().enumerate() {
        if candidate.parsed.is_none() {
            continue;
        }
        let score = match source {
            WeightSource::LogLik => candidate.log_likelihood,
            WeightSource::Verifier => candidate.verifier_score.unwrap_or(f64::NEG_INFINITY),
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((pos, score));
        }
    }
    let (pos, _) = best.ok_or(TtsError::AllCandidatesUnparseable)?;
    let mut weights = vec![0.0; candidates.len()];
    weights[pos] = 1.0;
    Ok(AggregationTrace {
        final_distribution: candidates[pos].parsed.clone().expect("selected parseable"),
        selected_index: Some(candidates[pos].index),
        weights,
        candidates: candidates.to_vec(),
    })
}

/// Fold an already-generated (and, for verifier strategies, already-scored)
/// candidate list into the strategy's final distribution. Pure: this is the
/// replay path from cache.
pub fn aggregate(
    candidates: &[Candidate],
    config: &StrategyConfig,
) -> Result<AggregationTrace, TtsError> {
    config.validate()?;
    match config.strategy {
        Strategy::Baseline | Strategy::Cot => single_candidate(candidates),
        Strategy::Bon => select_best(candidates, WeightSource::LogLik),
        Strategy::AlmV => select_best(candidates, WeightSource::Verifier),
        Strategy::WBon => weighted(candidates, config, WeightSource::LogLik),
        Strategy::WAlmV => weighted(candidates, config, WeightSource::Verifier),
    }
}

fn single_candidate(candidates: &[Candidate]) -> Result<AggregationTrace, TtsError> {
    let first = candidates.first().ok_or(TtsError::EmptyCandidateSet)?;
    let final_distribution = first
        .parsed
        .clone()
        .ok_or(TtsError::AllCandidatesUnparseable)?;
    let mut weights = vec![0.0; candidates.len()];
    weights[0] = 1.0;
    Ok(AggregationTrace {
        candidates: candidates.to_vec(),
        weights,
        selected_index: None,
        final_distribution,
    })
}

fn weighted(
    candidates: &[Candidate],
    config: &StrategyConfig,
    source: WeightSource,
) -> Result<AggregationTrace, TtsError> {
    // Unparseable candidates are dropped and the weights renormalized over
    // the survivors, never imputed as uniform.
    let survivors: Vec<(usize, &Candidate)> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.parsed.is_some())
        .collect();
    if survivors.is_empty() {
        return Err(TtsError::AllCandidatesUnparseable);
    }
    let scores: Vec<f64> = survivors
        .iter()
        .map(|(_, c)| match source {
            WeightSource::LogLik => c.log_likelihood,
            WeightSource::Verifier => c.verifier_score.unwrap_or(0.0),
        })
        .collect();
    let weights = match config.weight_transform {
        WeightTransform::Softmax => softmax_weights(&scores)?,
        WeightTransform::DirectNormalize => direct_normalize(&scores),
    };
    let survivor_refs: Vec<&Candidate> = survivors.iter().map(|(_, c)| *c).collect();
    let final_distribution = aggregate_dmm(&survivor_refs, &weights, config.tau)?;
    let mut full_weights = vec![0.0; candidates.len()];
    for ((pos, _), w) in survivors.iter().zip(&weights) {
        full_weights[*pos] = *w;
    }
    Ok(AggregationTrace {
        candidates: candidates.to_vec(),
        weights: full_weights,
        selected_index: None,
        final_distribution,
    })
}

/// Normalize non-negative scores directly (scores / Σ scores); an all-zero
/// score vector degrades to uniform weights.
fn direct_normalize(scores: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    if sum <= 0.0 {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    clamped.into_iter().map(|s| s / sum).collect()
}

/// Generate, (optionally) verify, and aggregate for one utterance.
pub fn run_strategy(
    utterance: &AnnotatedUtterance,
    config: &StrategyConfig,
    ctx: &StrategyContext<'_>,
) -> Result<AggregationTrace, TtsError> {
    config.validate()?;
    let kind = if config.strategy == Strategy::Cot {
        PromptKind::Cot
    } else {
        PromptKind::Base
    };
    let prompt = ctx.prompts.prediction_prompt(utterance, ctx.categories, kind)?;
    let mut generator_config = ctx.generator_config.clone();
    generator_config.num_candidates = config.b;
    let mut candidates = generate_candidates(
        utterance,
        &prompt,
        ctx.generator,
        &generator_config,
        ctx.categories,
    )?;
    if config.strategy.needs_verifier() {
        let verifier = ctx
            .verifier
            .ok_or_else(|| TtsError::MissingVerifier(config.strategy.to_string()))?;
        for candidate in candidates.iter_mut() {
            score_with_verifier(utterance, candidate, verifier, ctx.prompts, ctx.categories)?;
        }
    }
    aggregate(&candidates, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::SimBackend;
    use crate::metrics::js_divergence;
    use crate::prompts::PromptVariant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn cats() -> Arc<CategorySet> {
        CategorySet::new(vec!["Neutral state", "Happiness", "Anger", "Sadness"]).unwrap()
    }

    fn cand(index: usize, probs: Option<&[f64]>, alpha: f64, verifier: Option<f64>) -> Candidate {
        Candidate {
            index,
            raw_text: format!("candidate {index}"),
            parsed: probs.map(|p| EmotionDistribution::new(p.to_vec(), cats()).unwrap()),
            log_likelihood: alpha,
            verifier_score: verifier,
            verifier_fallback: false,
            logprobs_missing: false,
        }
    }

    fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        // Dirichlet(1) via normalized exponentials: uniform on the simplex.
        let draws: Vec<f64> = (0..k)
            .map(|_| -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln())
            .collect();
        let sum: f64 = draws.iter().sum();
        draws.into_iter().map(|d| d / sum).collect()
    }

    #[test]
    fn softmax_constant_alphas_are_uniform() {
        for c in [-5.0, 0.0, 3.7] {
            let w = softmax_weights(&[c, c, c]).unwrap();
            for wi in &w {
                assert!((wi - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_matches_direct_arithmetic() {
        // Independent evaluation: exp(0)/(exp(0)+exp(ln 3)) = 1/4.
        let w = softmax_weights(&[0.0, 3.0f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12);
        assert!((w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let alphas: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
            let shift = rng.random_range(-1000.0..1000.0);
            let shifted: Vec<f64> = alphas.iter().map(|a| a + shift).collect();
            let w1 = softmax_weights(&alphas).unwrap();
            let w2 = softmax_weights(&shifted).unwrap();
            for (a, b) in w1.iter().zip(&w2) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((w1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_handles_extreme_gaps_without_overflow() {
        let w = softmax_weights(&[0.0, -1000.0]).unwrap();
        assert!(w[0] > 1.0 - 1e-12);
        assert!(w[1] < 1e-12);
        assert!(w.iter().all(|x| x.is_finite()));

        let w = softmax_weights(&[1e8, 1e8 - 1.0]).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_requires_a_finite_score() {
        assert!(matches!(
            softmax_weights(&[]),
            Err(TtsError::NoFiniteScores)
        ));
        assert!(matches!(
            softmax_weights(&[f64::NAN, f64::NEG_INFINITY]),
            Err(TtsError::NoFiniteScores)
        ));
    }

    #[test]
    fn dmm_symmetric_example() {
        let a = cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), 0.0, None);
        let b = cand(2, Some(&[0.0, 1.0, 0.0, 0.0]), 0.0, None);
        let out = aggregate_dmm(&[&a, &b], &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(out.probs(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    #[allow(clippy::excessive_precision)] // exact ulp-level inputs on purpose
    fn dmm_single_candidate_is_bit_exact_identity() {
        let probs = [0.30000000000000004, 0.1, 0.25, 0.34999999999999996];
        let a = cand(1, Some(&probs), -1.0, None);
        let out = aggregate_dmm(&[&a], &[1.0], 1.0).unwrap();
        assert_eq!(out.probs(), a.parsed.as_ref().unwrap().probs());
    }

    #[test]
    fn dmm_matches_brute_force_weighted_sum_and_is_tau_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let n = rng.random_range(2..6);
            let cands: Vec<Candidate> = (0..n)
                .map(|i| cand(i + 1, Some(&random_simplex(&mut rng, 4)), 0.0, None))
                .collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let refs: Vec<&Candidate> = cands.iter().collect();

            let mut brute = vec![0.0f64; 4];
            for (c, w) in cands.iter().zip(&weights) {
                for (acc, p) in brute.iter_mut().zip(c.parsed.as_ref().unwrap().probs()) {
                    *acc += w * p;
                }
            }

            let outputs: Vec<EmotionDistribution> = [0.5, 1.0, 10.0]
                .iter()
                .map(|tau| aggregate_dmm(&refs, &weights, *tau).unwrap())
                .collect();
            for out in &outputs {
                for (got, want) in out.probs().iter().zip(&brute) {
                    assert!((got - want).abs() < 1e-12);
                }
                for (a, b) in out.probs().iter().zip(outputs[1].probs()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dmm_output_stays_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(2..7);
            let cands: Vec<Candidate> = (0..n)
                .map(|i| cand(i + 1, Some(&random_simplex(&mut rng, 4)), 0.0, None))
                .collect();
            let weights = softmax_weights(
                &(0..n)
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect::<Vec<f64>>(),
            )
            .unwrap();
            let refs: Vec<&Candidate> = cands.iter().collect();
            let out = aggregate_dmm(&refs, &weights, 1.0).unwrap();
            for k in 0..4 {
                let lo = cands
                    .iter()
                    .map(|c| c.parsed.as_ref().unwrap().probs()[k])
                    .fold(f64::INFINITY, f64::min);
                let hi = cands
                    .iter()
                    .map(|c| c.parsed.as_ref().unwrap().probs()[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                let got = out.probs()[k];
                assert!(got >= lo - 1e-12 && got <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn dmm_errors() {
        assert!(matches!(
            aggregate_dmm(&[], &[], 1.0),
            Err(TtsError::EmptyCandidateSet)
        ));
        let a = cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), 0.0, None);
        assert!(matches!(
            aggregate_dmm(&[&a], &[0.5, 0.5], 1.0),
            Err(TtsError::WeightMismatch(1, 2))
        ));
        assert!(matches!(
            aggregate_dmm(&[&a], &[1.0], 0.0),
            Err(TtsError::InvalidStrategyConfig(_))
        ));
        let bad = cand(2, None, 0.0, None);
        assert!(matches!(
            aggregate_dmm(&[&a, &bad], &[0.5, 0.5], 1.0),
            Err(TtsError::UnparsedCandidate(2))
        ));
    }

    #[test]
    fn select_best_by_loglik() {
        let cands = vec![
            cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), -1.0, None),
            cand(2, Some(&[0.0, 1.0, 0.0, 0.0]), -0.5, None),
            cand(3, Some(&[0.0, 0.0, 1.0, 0.0]), -2.0, None),
        ];
        let trace = select_best(&cands, WeightSource::LogLik).unwrap();
        assert_eq!(trace.selected_index, Some(2));
        assert_eq!(trace.weights, vec![0.0, 1.0, 0.0]);
        assert_eq!(trace.final_distribution.probs(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn select_best_ties_break_low() {
        let cands = vec![
            cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), 0.0, Some(0.8)),
            cand(2, Some(&[0.0, 1.0, 0.0, 0.0]), 0.0, Some(0.8)),
        ];
        let trace = select_best(&cands, WeightSource::Verifier).unwrap();
        assert_eq!(trace.selected_index, Some(1));
    }

    #[test]
    fn select_best_skips_unparseable() {
        let cands = vec![
            cand(1, None, 10.0, Some(1.0)),
            cand(2, Some(&[0.0, 0.0, 1.0, 0.0]), -5.0, Some(0.1)),
        ];
        let trace = select_best(&cands, WeightSource::LogLik).unwrap();
        assert_eq!(trace.selected_index, Some(2));

        let none = vec![cand(1, None, 0.0, None)];
        assert!(matches!(
            select_best(&none, WeightSource::LogLik),
            Err(TtsError::AllCandidatesUnparseable)
        ));
    }

    #[test]
    fn select_best_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let cands: Vec<Candidate> = (0..5)
                .map(|i| {
                    cand(
                        i + 1,
                        Some(&random_simplex(&mut rng, 4)),
                        rng.random_range(-10.0..0.0),
                        None,
                    )
                })
                .collect();
            let base = select_best(&cands, WeightSource::LogLik).unwrap();
            // Strictly monotone transform of every score.
            let transformed: Vec<Candidate> = cands
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.log_likelihood = (c.log_likelihood * 0.5).exp();
                    c
                })
                .collect();
            let after = select_best(&transformed, WeightSource::LogLik).unwrap();
            assert_eq!(base.selected_index, after.selected_index);
        }
    }

    #[test]
    fn weighted_drops_unparseable_and_renormalizes() {
        let cands = vec![
            cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), -1.0, None),
            cand(2, None, -0.1, None),
            cand(3, Some(&[0.0, 0.0, 0.0, 1.0]), -1.0, None),
        ];
        let config = StrategyConfig::new(Strategy::WBon).with_b(3);
        let trace = aggregate(&cands, &config).unwrap();
        assert_eq!(trace.weights[1], 0.0);
        assert!((trace.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Equal alphas over survivors: even split.
        assert!((trace.weights[0] - 0.5).abs() < 1e-12);
        assert!((trace.weights[2] - 0.5).abs() < 1e-12);
        assert_eq!(trace.final_distribution.probs(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(trace.selected_index, None);
    }

    #[test]
    fn direct_normalize_transform() {
        let cands = vec![
            cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), 0.0, Some(0.2)),
            cand(2, Some(&[0.0, 1.0, 0.0, 0.0]), 0.0, Some(0.6)),
        ];
        let config = StrategyConfig::new(Strategy::WAlmV)
            .with_b(2)
            .with_transform(WeightTransform::DirectNormalize);
        let trace = aggregate(&cands, &config).unwrap();
        assert!((trace.weights[0] - 0.25).abs() < 1e-12);
        assert!((trace.weights[1] - 0.75).abs() < 1e-12);

        // All-zero verifier scores degrade to uniform.
        let zeros = vec![
            cand(1, Some(&[1.0, 0.0, 0.0, 0.0]), 0.0, Some(0.0)),
            cand(2, Some(&[0.0, 1.0, 0.0, 0.0]), 0.0, Some(0.0)),
        ];
        let trace = aggregate(&zeros, &config).unwrap();
        assert_eq!(trace.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn config_validation_rules() {
        assert!(StrategyConfig::new(Strategy::Baseline).validate().is_ok());
        assert!(StrategyConfig::new(Strategy::Baseline)
            .with_b(3)
            .validate()
            .is_err());
        assert!(StrategyConfig::new(Strategy::WBon).with_b(1).validate().is_ok());
        assert!(StrategyConfig::new(Strategy::WBon).with_b(8).validate().is_err());
        assert!(StrategyConfig::new(Strategy::WBon).with_b(0).validate().is_err());
        assert!(StrategyConfig::new(Strategy::Bon)
            .with_tau(0.0)
            .validate()
            .is_err());
        let mut wrong_source = StrategyConfig::new(Strategy::WBon);
        wrong_source.weight_source = WeightSource::Verifier;
        assert!(wrong_source.validate().is_err());
    }

    fn sim_context<'a>(
        backend: &'a SimBackend,
        config: &'a BackendConfig,
        prompts: &'a PromptSet,
        categories: &'a Arc<CategorySet>,
    ) -> StrategyContext<'a> {
        StrategyContext {
            generator: backend,
            verifier: Some(backend),
            generator_config: config,
            prompts,
            categories,
        }
    }

    fn utt(id: &str) -> AnnotatedUtterance {
        AnnotatedUtterance {
            utterance_id: id.to_string(),
            audio_path: format!("audio/{id}.wav"),
            transcript: Some("hello there".to_string()),
            rater_labels: vec![vec!["Anger".to_string()]],
            dataset_id: "test".to_string(),
        }
    }

    #[test]
    fn noiseless_strategies_recover_ground_truth() {
        let categories = cats();
        let truth =
            EmotionDistribution::new(vec![0.4, 0.3, 0.2, 0.1], Arc::clone(&categories)).unwrap();
        let mut table = HashMap::new();
        table.insert("u1".to_string(), truth.clone());
        let backend = SimBackend::new(table, Arc::clone(&categories), 0.0, 8.0, 3);
        let config = BackendConfig::simulated("sim", 0.0, 8.0);
        let prompts = PromptSet::defaults(PromptVariant::Utterance);
        let ctx = sim_context(&backend, &config, &prompts, &categories);

        for strategy in Strategy::all() {
            let trace = run_strategy(&utt("u1"), &StrategyConfig::new(strategy), &ctx).unwrap();
            let js = js_divergence(&trace.final_distribution, &truth).unwrap();
            assert!(js < 1e-12, "{strategy} noiseless js = {js}");
        }
    }

    #[test]
    fn degenerate_b_reduces_to_baseline() {
        let categories = cats();
        let truth =
            EmotionDistribution::new(vec![0.4, 0.3, 0.2, 0.1], Arc::clone(&categories)).unwrap();
        let mut table = HashMap::new();
        table.insert("u1".to_string(), truth);
        let backend = SimBackend::new(table, Arc::clone(&categories), 0.6, 8.0, 3);
        let config = BackendConfig::simulated("sim", 0.6, 8.0);
        let prompts = PromptSet::defaults(PromptVariant::Utterance);
        let ctx = sim_context(&backend, &config, &prompts, &categories);

        let baseline =
            run_strategy(&utt("u1"), &StrategyConfig::new(Strategy::Baseline), &ctx).unwrap();
        for strategy in [Strategy::Bon, Strategy::WBon] {
            let reduced = run_strategy(
                &utt("u1"),
                &StrategyConfig::new(strategy).with_b(1),
                &ctx,
            )
            .unwrap();
            assert_eq!(
                reduced.final_distribution.probs(),
                baseline.final_distribution.probs(),
                "{strategy} with B = 1 drifted from baseline"
            );
            assert_eq!(
                reduced.candidates[0].raw_text,
                baseline.candidates[0].raw_text
            );
        }
    }

    #[test]
    fn verifier_strategy_requires_verifier_backend() {
        let categories = cats();
        let truth =
            EmotionDistribution::new(vec![0.4, 0.3, 0.2, 0.1], Arc::clone(&categories)).unwrap();
        let mut table = HashMap::new();
        table.insert("u1".to_string(), truth);
        let backend = SimBackend::new(table, Arc::clone(&categories), 0.0, 8.0, 3);
        let config = BackendConfig::simulated("sim", 0.0, 8.0);
        let prompts = PromptSet::defaults(PromptVariant::Utterance);
        let mut ctx = sim_context(&backend, &config, &prompts, &categories);
        ctx.verifier = None;
        assert!(matches!(
            run_strategy(&utt("u1"), &StrategyConfig::new(Strategy::AlmV), &ctx),
            Err(TtsError::MissingVerifier(_))
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for strategy in Strategy::all() {
            let name = strategy.to_string();
            assert_eq!(name.parse::<Strategy>().unwrap(), strategy);
            let json = serde_json::to_string(&strategy).unwrap();
            assert_eq!(json, format!("\"{name}\""));
        }
        assert!("best-of-none".parse::<Strategy>().is_err());
    }
}
