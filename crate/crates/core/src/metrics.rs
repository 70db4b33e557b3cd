//! Evaluation measures for predicted emotion distributions.
//!
//! Distribution-level: Jensen-Shannon divergence (base-2 logs, so the range
//! is exactly [0, 1]), Bhattacharyya coefficient, and a pooled R² over all
//! (utterance, class) probability cells. Class-level: dominant-emotion
//! accuracy and macro-F1 against the annotators' majority vote. Per-bin
//! medians summarize metric behavior across ambiguity levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::EmotionDistribution;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricError {
    #[error("distributions are over different category sets")]
    CategoryMismatch,
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("all ground-truth cells are equal; R² is undefined")]
    DegenerateVariance,
}

/// Per-utterance evaluation record.
#[derive(Debug, Clone)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub ground_truth: EmotionDistribution,
    pub prediction: EmotionDistribution,
    pub js: f64,
    pub bc: f64,
    pub bin_index: usize,
    pub gt_majority: usize,
    pub pred_dominant: usize,
}

impl UtteranceResult {
    pub fn new(
        utterance_id: String,
        ground_truth: EmotionDistribution,
        prediction: EmotionDistribution,
        bin_index: usize,
    ) -> Result<Self, MetricError> {
        let js = js_divergence(&ground_truth, &prediction)?;
        let bc = bhattacharyya(&ground_truth, &prediction)?;
        let gt_majority = ground_truth.dominant_index();
        let pred_dominant = prediction.dominant_index();
        Ok(Self {
            utterance_id,
            ground_truth,
            prediction,
            js,
            bc,
            bin_index,
            gt_majority,
            pred_dominant,
        })
    }
}

/// Summary of one entropy bin. Medians are absent for empty bins; `r2` is
/// absent when the bin has fewer than two members or degenerate variance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BinSummary {
    pub bin_index: usize,
    pub count: usize,
    pub median_js: Option<f64>,
    pub median_bc: Option<f64>,
    pub r2: Option<f64>,
}

/// Aggregate metrics for one (dataset, model, strategy) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset_id: String,
    pub model_name: String,
    pub strategy: String,
    pub mean_js: f64,
    pub mean_bc: f64,
    pub r2: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Fraction of manifest utterances that produced a usable prediction.
    pub valid_rate: f64,
    pub per_bin: Vec<BinSummary>,
}

fn check_pair(
    p: &EmotionDistribution,
    q: &EmotionDistribution,
) -> Result<(), MetricError> {
    if !p.same_categories(q) {
        return Err(MetricError::CategoryMismatch);
    }
    Ok(())
}

/// Jensen-Shannon divergence with base-2 logs: JS(p,q) = ½KL(p‖m) + ½KL(q‖m)
/// with m = ½(p+q) and the 0·log(0/·) = 0 convention. Range [0, 1].
pub fn js_divergence(
    p: &EmotionDistribution,
    q: &EmotionDistribution,
) -> Result<f64, MetricError> {
    check_pair(p, q)?;
    let mut js = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).log2();
        }
    }
    Ok(js)
}

/// Bhattacharyya coefficient Σ√(p_k q_k). 1 on identical distributions,
/// 0 on disjoint supports.
pub fn bhattacharyya(
    p: &EmotionDistribution,
    q: &EmotionDistribution,
) -> Result<f64, MetricError> {
    check_pair(p, q)?;
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| (a * b).sqrt())
        .sum())
}

/// Pooled R² over all (utterance, class) probability cells:
/// 1 − SS_res/SS_tot with SS_tot taken around the grand mean of the
/// ground-truth cells, clamped below at 0.
pub fn r_squared(
    pairs: &[(EmotionDistribution, EmotionDistribution)],
) -> Result<f64, MetricError> {
    if pairs.len() < 2 {
        return Err(MetricError::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    for (gt, pred) in pairs {
        check_pair(gt, pred)?;
    }
    let n_cells: usize = pairs.iter().map(|(gt, _)| gt.len()).sum();
    let grand_mean: f64 = pairs
        .iter()
        .flat_map(|(gt, _)| gt.probs())
        .sum::<f64>()
        / n_cells as f64;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (gt, pred) in pairs {
        for (&t, &y) in gt.probs().iter().zip(pred.probs()) {
            ss_res += (t - y) * (t - y);
            ss_tot += (t - grand_mean) * (t - grand_mean);
        }
    }
    if ss_tot <= 0.0 {
        return Err(MetricError::DegenerateVariance);
    }
    Ok((1.0 - ss_res / ss_tot).max(0.0))
}

/// Dominant-emotion accuracy and macro-F1 over all `k` configured classes.
/// Classes absent from both predictions and ground truth contribute F1 = 0,
/// so a model that never emits an existing class depresses macro-F1 even at
/// high accuracy.
pub fn classification_scores(results: &[UtteranceResult], k: usize) -> (f64, f64) {
    if results.is_empty() {
        return (0.0, 0.0);
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    let mut correct = 0usize;
    for r in results {
        if r.pred_dominant == r.gt_majority {
            correct += 1;
            tp[r.gt_majority] += 1;
        } else {
            fp[r.pred_dominant] += 1;
            fn_[r.gt_majority] += 1;
        }
    }
    let accuracy = correct as f64 / results.len() as f64;
    let mut f1_sum = 0.0;
    for c in 0..k {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    (accuracy, f1_sum / k as f64)
}

/// Per-bin medians of JS and BC plus a per-bin pooled R², for the five
/// ambiguity bins. Even-sized bins use the mean of the two middle values.
pub fn bin_medians(results: &[UtteranceResult]) -> Vec<BinSummary> {
    (0..5)
        .map(|bin_index| {
            let members: Vec<&UtteranceResult> = results
                .iter()
                .filter(|r| r.bin_index == bin_index)
                .collect();
            let js: Vec<f64> = members.iter().map(|r| r.js).collect();
            let bc: Vec<f64> = members.iter().map(|r| r.bc).collect();
            let pairs: Vec<(EmotionDistribution, EmotionDistribution)> = members
                .iter()
                .map(|r| (r.ground_truth.clone(), r.prediction.clone()))
                .collect();
            BinSummary {
                bin_index,
                count: members.len(),
                median_js: median(&js),
                median_bc: median(&bc),
                r2: r_squared(&pairs).ok(),
            }
        })
        .collect()
}

/// Median with the even-count rule (mean of the two middle values).
/// None for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}
