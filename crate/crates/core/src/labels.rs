//! Annotation ingestion, empirical soft labels, majority votes, and
//! entropy-based ambiguity binning.
//!
//! A manifest is newline-delimited JSON, one utterance per line:
//!
//! ```json
//! {"utterance_id":"ses01_01","audio_path":"audio/ses01_01.wav",
//!  "transcript":"Yeah.","labels":[["Anger"],["Anger","Sadness"]],
//!  "dataset":"iemocap"}
//! ```
//!
//! Raters may contribute multiple labels per utterance; all labels are
//! flattened and counted equally, so annotator-expressed ambiguity survives
//! into the soft label. Rows carrying any label outside the configured
//! category set are rejected whole and counted, mirroring utterance-level
//! dataset filtering.

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{CategorySet, DistributionError, EmotionDistribution};

#[derive(Error, Debug)]
pub enum LabelError {
    #[error("no labels survive filtering for utterance {0}")]
    EmptyAnnotations(String),
    #[error("need at least 5 examples to fit a binning, got {0}")]
    TooFewExamples(usize),
    #[error("duplicate utterance_id in manifest: {0}")]
    DuplicateUtteranceId(String),
    #[error("cannot read manifest {path}: {source}")]
    ManifestIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown bin mode: {0} (expected quantile or equal-width)")]
    UnknownBinMode(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// One utterance with its per-rater annotations. `rater_labels` holds one
/// inner list per rater; multi-label raters are allowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub utterance_id: String,
    pub audio_path: String,
    #[serde(default)]
    pub transcript: Option<String>,
    #[serde(rename = "labels")]
    pub rater_labels: Vec<Vec<String>>,
    #[serde(rename = "dataset")]
    pub dataset_id: String,
}

/// An utterance paired with its derived soft label.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub utterance: AnnotatedUtterance,
    pub soft_label: EmotionDistribution,
    pub entropy_bits: f64,
    pub majority_index: usize,
}

/// Empirical soft label: normalized counts of category occurrences across
/// all raters' labels, flattened.
pub fn build_soft_label(
    utterance: &AnnotatedUtterance,
    categories: &Arc<CategorySet>,
) -> Result<EmotionDistribution, LabelError> {
    let mut counts = vec![0.0f64; categories.len()];
    let mut total = 0usize;
    for rater in &utterance.rater_labels {
        for label in rater {
            match categories.index_of(label) {
                Some(idx) => {
                    counts[idx] += 1.0;
                    total += 1;
                }
                None => {
                    // Out-of-set labels reject the whole row at ingestion;
                    // reaching one here means the caller skipped ingestion,
                    // so treat the label as filtered out.
                }
            }
        }
    }
    if total == 0 {
        return Err(LabelError::EmptyAnnotations(utterance.utterance_id.clone()));
    }
    Ok(EmotionDistribution::normalize(&counts, categories)?)
}

/// Majority vote = dominant index of the soft label; ties resolve toward the
/// lower category index.
pub fn majority_vote(
    utterance: &AnnotatedUtterance,
    categories: &Arc<CategorySet>,
) -> Result<usize, LabelError> {
    Ok(build_soft_label(utterance, categories)?.dominant_index())
}

/// Build [`LabeledExample`]s for a batch of ingested utterances.
pub fn build_examples(
    utterances: Vec<AnnotatedUtterance>,
    categories: &Arc<CategorySet>,
) -> Result<Vec<LabeledExample>, LabelError> {
    utterances
        .into_iter()
        .map(|utterance| {
            let soft_label = build_soft_label(&utterance, categories)?;
            let entropy_bits = soft_label.entropy_bits();
            let majority_index = soft_label.dominant_index();
            Ok(LabeledExample {
                utterance,
                soft_label,
                entropy_bits,
                majority_index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMode {
    #[default]
    Quantile,
    EqualWidth,
}

impl std::fmt::Display for BinningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BinningMode::Quantile => write!(f, "quantile"),
            BinningMode::EqualWidth => write!(f, "equal-width"),
        }
    }
}

impl std::str::FromStr for BinningMode {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quantile" => Ok(BinningMode::Quantile),
            "equal-width" => Ok(BinningMode::EqualWidth),
            other => Err(LabelError::UnknownBinMode(other.to_string())),
        }
    }
}

/// Five ambiguity bins over entropy, defined by 4 interior cut points.
///
/// A value equal to a boundary goes to the lower bin. Boundaries are
/// non-decreasing; with heavily tied entropy values adjacent cut points can
/// coincide, in which case the tied mass all lands in the lower bin. When
/// every entropy is identical, equal-width mode degenerates to all examples
/// in bin 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyBinning {
    pub boundaries: [f64; 4],
    pub mode: BinningMode,
}

/// Fit the five-bin partition over observed entropies.
///
/// Quantile mode places boundaries at the 20/40/60/80th percentiles
/// (value at 1-based rank ceil(q·n)); equal-width mode splits
/// [min, max] into five equal intervals.
pub fn fit_binning(
    examples: &[LabeledExample],
    mode: BinningMode,
) -> Result<EntropyBinning, LabelError> {
    let entropies: Vec<f64> = examples.iter().map(|e| e.entropy_bits).collect();
    fit_binning_over(&entropies, mode)
}

/// Same as [`fit_binning`] but over raw entropy values.
pub fn fit_binning_over(
    entropies: &[f64],
    mode: BinningMode,
) -> Result<EntropyBinning, LabelError> {
    let n = entropies.len();
    if n < 5 {
        return Err(LabelError::TooFewExamples(n));
    }
    let boundaries = match mode {
        BinningMode::Quantile => {
            let mut sorted = entropies.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            // Integer rank arithmetic avoids float error in n*0.2 products:
            // the k-th boundary sits at 1-based rank ceil(k*n/5).
            let mut b = [0.0; 4];
            for (k, slot) in b.iter_mut().enumerate() {
                let rank = ((k + 1) * n).div_ceil(5);
                *slot = sorted[rank - 1];
            }
            b
        }
        BinningMode::EqualWidth => {
            let min = entropies.iter().copied().fold(f64::INFINITY, f64::min);
            let max = entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (max - min) / 5.0;
            // Degenerate range (all entropies equal): width 0, every cut
            // point collapses onto min and all examples land in bin 0.
            [
                min + width,
                min + 2.0 * width,
                min + 3.0 * width,
                min + 4.0 * width,
            ]
        }
    };
    Ok(EntropyBinning { boundaries, mode })
}

impl EntropyBinning {
    /// Bin index in 0..=4 for an entropy value. Values equal to a boundary
    /// go to the lower bin.
    pub fn assign(&self, entropy_bits: f64) -> usize {
        self.boundaries.iter().filter(|&&b| b < entropy_bits).count()
    }
}

/// Bin assignment for one example.
pub fn assign_bin(example: &LabeledExample, binning: &EntropyBinning) -> usize {
    binning.assign(example.entropy_bits)
}

/// Why a manifest row was rejected at ingestion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum RejectReason {
    MalformedRecord,
    UnknownLabel(String),
    NoLabels,
    DatasetMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line_number: usize,
    pub utterance_id: Option<String>,
    pub reason: RejectReason,
}

/// Result of streaming one manifest: accepted utterances plus an account of
/// every rejected row.
#[derive(Debug)]
pub struct IngestOutcome {
    pub utterances: Vec<AnnotatedUtterance>,
    pub rejected: Vec<RejectedRow>,
}

impl IngestOutcome {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Stream a newline-delimited manifest, validating each row against the
/// category set. Rows are processed line by line so large manifests never
/// need to be memory-resident beyond the accepted set.
pub fn ingest_manifest(
    path: &Path,
    dataset_id: &str,
    categories: &Arc<CategorySet>,
) -> Result<IngestOutcome, LabelError> {
    let file = std::fs::File::open(path).map_err(|source| LabelError::ManifestIo {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    ingest_lines(reader, dataset_id, categories)
}

/// Ingest from any line-oriented reader (used directly by tests).
pub fn ingest_lines<R: BufRead>(
    reader: R,
    dataset_id: &str,
    categories: &Arc<CategorySet>,
) -> Result<IngestOutcome, LabelError> {
    let mut utterances: Vec<AnnotatedUtterance> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut rejected = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_number = idx + 1;
        let line = line.map_err(|source| LabelError::ManifestIo {
            path: format!("<line {line_number}>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: AnnotatedUtterance = match serde_json::from_str(&line) {
            Ok(row) => row,
            Err(_) => {
                rejected.push(RejectedRow {
                    line_number,
                    utterance_id: None,
                    reason: RejectReason::MalformedRecord,
                });
                continue;
            }
        };
        if row.dataset_id != dataset_id {
            rejected.push(RejectedRow {
                line_number,
                utterance_id: Some(row.utterance_id),
                reason: RejectReason::DatasetMismatch {
                    expected: dataset_id.to_string(),
                    got: row.dataset_id,
                },
            });
            continue;
        }
        if !seen_ids.insert(row.utterance_id.clone()) {
            return Err(LabelError::DuplicateUtteranceId(row.utterance_id));
        }
        let total_labels: usize = row.rater_labels.iter().map(|r| r.len()).sum();
        if total_labels == 0 {
            rejected.push(RejectedRow {
                line_number,
                utterance_id: Some(row.utterance_id),
                reason: RejectReason::NoLabels,
            });
            continue;
        }
        let unknown = row
            .rater_labels
            .iter()
            .flatten()
            .find(|label| categories.index_of(label).is_none());
        if let Some(label) = unknown {
            rejected.push(RejectedRow {
                line_number,
                utterance_id: Some(row.utterance_id.clone()),
                reason: RejectReason::UnknownLabel(label.clone()),
            });
            continue;
        }
        utterances.push(row);
    }
    Ok(IngestOutcome {
        utterances,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cats() -> Arc<CategorySet> {
        CategorySet::new(vec!["Neutral state", "Happiness", "Anger", "Sadness"]).unwrap()
    }

    fn utt(id: &str, raters: Vec<Vec<&str>>) -> AnnotatedUtterance {
        AnnotatedUtterance {
            utterance_id: id.to_string(),
            audio_path: format!("audio/{id}.wav"),
            transcript: Some("hello".to_string()),
            rater_labels: raters
                .into_iter()
                .map(|r| r.into_iter().map(String::from).collect())
                .collect(),
            dataset_id: "test".to_string(),
        }
    }

    #[test]
    fn soft_label_unanimous() {
        let c = cats();
        let u = utt("a", vec![vec!["Anger"], vec!["Anger"], vec!["Anger"]]);
        let d = build_soft_label(&u, &c).unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn soft_label_symmetric_split() {
        let c = cats();
        let u = utt("a", vec![vec!["Anger"], vec!["Sadness"]]);
        let d = build_soft_label(&u, &c).unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn soft_label_flattens_multi_label_raters() {
        let c = cats();
        let u = utt(
            "a",
            vec![vec!["Anger", "Sadness"], vec!["Anger"], vec!["Neutral state"]],
        );
        // Hand count over flattened labels: [1, 0, 2, 1] / 4.
        let d = build_soft_label(&u, &c).unwrap();
        assert_eq!(d.probs(), &[0.25, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn soft_label_empty_annotations() {
        let c = cats();
        let u = utt("a", vec![vec![]]);
        assert!(matches!(
            build_soft_label(&u, &c),
            Err(LabelError::EmptyAnnotations(_))
        ));
    }

    #[test]
    fn soft_label_rater_order_invariant() {
        let c = cats();
        let raters = vec![
            vec!["Anger"],
            vec!["Sadness", "Anger"],
            vec!["Happiness"],
            vec!["Neutral state"],
        ];
        let base = build_soft_label(&utt("a", raters.clone()), &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut shuffled = raters.clone();
            shuffled.shuffle(&mut rng);
            let d = build_soft_label(&utt("a", shuffled), &c).unwrap();
            assert_eq!(d.probs(), base.probs());
        }
    }

    #[test]
    fn majority_vote_cases() {
        let c = cats();
        let strict = utt("a", vec![vec!["Anger"], vec!["Anger"], vec!["Sadness"]]);
        assert_eq!(majority_vote(&strict, &c).unwrap(), 2);

        // Tie between Anger (index 2) and Sadness (index 3): earlier wins.
        let tie = utt("b", vec![vec!["Anger"], vec!["Sadness"]]);
        assert_eq!(majority_vote(&tie, &c).unwrap(), 2);

        let unanimous = utt("c", vec![vec!["Happiness"], vec!["Happiness"]]);
        assert_eq!(majority_vote(&unanimous, &c).unwrap(), 1);

        // Single source of truth with the soft label path.
        for u in [&strict, &tie, &unanimous] {
            assert_eq!(
                majority_vote(u, &c).unwrap(),
                build_soft_label(u, &c).unwrap().dominant_index()
            );
        }
    }

    fn example_with_entropy(c: &Arc<CategorySet>, target_bits: f64) -> LabeledExample {
        // Mixture of one-hot and uniform hits any entropy in [0, log2 K];
        // bisect over the mixing weight.
        let k = c.len();
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let mut probs = vec![mid / k as f64; k];
            probs[0] += 1.0 - mid;
            let h = EmotionDistribution::new(probs, Arc::clone(c))
                .unwrap()
                .entropy_bits();
            if h < target_bits {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        let mut probs = vec![lambda / k as f64; k];
        probs[0] += 1.0 - lambda;
        let soft_label = EmotionDistribution::new(probs, Arc::clone(c)).unwrap();
        let entropy_bits = soft_label.entropy_bits();
        LabeledExample {
            utterance: utt("synthetic", vec![vec!["Anger"]]),
            soft_label: soft_label.clone(),
            entropy_bits,
            majority_index: soft_label.dominant_index(),
        }
    }

    #[test]
    fn quantile_binning_equal_counts() {
        let c = cats();
        let examples: Vec<LabeledExample> = (0..10)
            .map(|i| example_with_entropy(&c, i as f64 * 0.1))
            .collect();
        let binning = fit_binning(&examples, BinningMode::Quantile).unwrap();
        let mut counts = [0usize; 5];
        for e in &examples {
            counts[assign_bin(e, &binning)] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2, 2]);
    }

    #[test]
    fn equal_width_binning_example() {
        // Entropies {0, 1, 2} over 4 classes: boundaries at 0.4/0.8/1.2/1.6.
        let binning = fit_binning_over(&[0.0, 1.0, 2.0, 0.5, 1.5], BinningMode::EqualWidth);
        let binning = binning.unwrap();
        for (got, want) in binning.boundaries.iter().zip([0.4, 0.8, 1.2, 1.6]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_width_degenerate_all_equal() {
        let binning =
            fit_binning_over(&[0.7, 0.7, 0.7, 0.7, 0.7, 0.7], BinningMode::EqualWidth).unwrap();
        for e in [0.7, 0.7, 0.7] {
            assert_eq!(binning.assign(e), 0);
        }
    }

    #[test]
    fn assign_boundary_goes_to_lower_bin() {
        let binning = EntropyBinning {
            boundaries: [0.4, 0.8, 1.2, 1.6],
            mode: BinningMode::EqualWidth,
        };
        assert_eq!(binning.assign(0.0), 0);
        assert_eq!(binning.assign(0.8), 1);
        assert_eq!(binning.assign(2.0), 4);
        assert_eq!(binning.assign(0.81), 2);
    }

    #[test]
    fn too_few_examples() {
        assert!(matches!(
            fit_binning_over(&[0.1, 0.2], BinningMode::Quantile),
            Err(LabelError::TooFewExamples(2))
        ));
    }

    #[test]
    fn quantile_counts_differ_by_at_most_one_when_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for _ in 0..20 {
            let n = rng.random_range(5..500);
            let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            vals.shuffle(&mut rng);
            let binning = fit_binning_over(&vals, BinningMode::Quantile).unwrap();
            let mut counts = [0usize; 5];
            for v in &vals {
                counts[binning.assign(*v)] += 1;
            }
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(
                max - min <= 1,
                "counts {counts:?} for n={n} spread more than 1"
            );
        }
    }

    #[test]
    fn ingest_accepts_and_rejects() {
        let c = cats();
        let manifest = concat!(
            r#"{"utterance_id":"u1","audio_path":"a/u1.wav","transcript":"hi","labels":[["Anger"]],"dataset":"test"}"#,
            "\n",
            r#"{"utterance_id":"u2","audio_path":"a/u2.wav","labels":[["Surprise"]],"dataset":"test"}"#,
            "\n",
            "not json\n",
            r#"{"utterance_id":"u3","audio_path":"a/u3.wav","labels":[[]],"dataset":"test"}"#,
            "\n",
            r#"{"utterance_id":"u4","audio_path":"a/u4.wav","labels":[["Sadness"]],"dataset":"other"}"#,
            "\n",
            r#"{"utterance_id":"u5","audio_path":"a/u5.wav","labels":[["Sadness"],["Anger","Happiness"]],"dataset":"test"}"#,
            "\n",
        );
        let out = ingest_lines(manifest.as_bytes(), "test", &c).unwrap();
        assert_eq!(out.utterances.len(), 2);
        assert_eq!(out.utterances[0].utterance_id, "u1");
        assert_eq!(out.utterances[1].utterance_id, "u5");
        assert_eq!(out.rejected_count(), 4);
        assert!(matches!(out.rejected[0].reason, RejectReason::UnknownLabel(_)));
        assert!(matches!(out.rejected[1].reason, RejectReason::MalformedRecord));
        assert!(matches!(out.rejected[2].reason, RejectReason::NoLabels));
        assert!(matches!(
            out.rejected[3].reason,
            RejectReason::DatasetMismatch { .. }
        ));
    }

    #[test]
    fn ingest_duplicate_id_is_an_error() {
        let c = cats();
        let manifest = concat!(
            r#"{"utterance_id":"u1","audio_path":"a.wav","labels":[["Anger"]],"dataset":"test"}"#,
            "\n",
            r#"{"utterance_id":"u1","audio_path":"b.wav","labels":[["Sadness"]],"dataset":"test"}"#,
            "\n",
        );
        assert!(matches!(
            ingest_lines(manifest.as_bytes(), "test", &c),
            Err(LabelError::DuplicateUtteranceId(_))
        ));
    }
}
