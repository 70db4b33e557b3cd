//! Simplex distributions over a fixed emotion category set.
//!
//! [`CategorySet`] fixes the category ordering for a run; [`EmotionDistribution`]
//! is a probability vector over it. Both are immutable after construction and
//! every operation here is a pure function, so values can be shared freely
//! across threads.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for the simplex sum invariant. Well above f64
/// accumulation error for the category counts used here (K <= 8).
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DistributionError {
    #[error("category set needs at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("category name is empty or duplicated: {0:?}")]
    BadCategoryName(String),
    #[error("expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("component {index} is negative ({value})")]
    NegativeComponent { index: usize, value: f64 },
    #[error("vector has (near-)zero total mass: sum = {0}")]
    ZeroMass(f64),
    #[error("components sum to {0}, which is not 1 within {SIMPLEX_TOLERANCE}")]
    NotNormalized(f64),
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
}

/// Ordered, immutable set of emotion category names.
///
/// Index `i` maps to `names()[i]` for the lifetime of a run. Names are
/// matched case-insensitively after trimming, so they must also be unique
/// under that normalization.
#[derive(Debug, Clone, Serialize)]
pub struct CategorySet {
    names: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl<'de> Deserialize<'de> for CategorySet {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            names: Vec<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let set = CategorySet::new(raw.names).map_err(serde::de::Error::custom)?;
        Ok(Arc::try_unwrap(set).unwrap_or_else(|arc| (*arc).clone()))
    }
}

impl CategorySet {
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Arc<Self>, DistributionError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(DistributionError::TooFewCategories(names.len()));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let key = Self::normalize_key(name);
            if key.is_empty() {
                return Err(DistributionError::BadCategoryName(name.clone()));
            }
            if lookup.insert(key, i).is_some() {
                return Err(DistributionError::BadCategoryName(name.clone()));
            }
        }
        Ok(Arc::new(Self { names, lookup }))
    }

    fn normalize_key(name: &str) -> String {
        name.trim().to_lowercase()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Case-insensitive, whitespace-trimmed category lookup.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.lookup.get(&Self::normalize_key(label)).copied()
    }
}

impl PartialEq for CategorySet {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}
impl Eq for CategorySet {}

/// Probability vector over a [`CategorySet`].
///
/// Invariants, checked at every construction site: component count equals K,
/// every component is >= 0 and finite, and the components sum to 1 within
/// [`SIMPLEX_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDistribution {
    probs: Vec<f64>,
    categories: Arc<CategorySet>,
}

impl EmotionDistribution {
    /// Build from components that already sum to 1.
    pub fn new(
        probs: Vec<f64>,
        categories: Arc<CategorySet>,
    ) -> Result<Self, DistributionError> {
        validate_components(&probs, categories.len())?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(DistributionError::NotNormalized(sum));
        }
        Ok(Self { probs, categories })
    }

    /// Normalize a non-negative vector to the simplex.
    pub fn normalize(
        raw: &[f64],
        categories: &Arc<CategorySet>,
    ) -> Result<Self, DistributionError> {
        validate_components(raw, categories.len())?;
        let sum: f64 = raw.iter().sum();
        if sum <= SIMPLEX_TOLERANCE {
            return Err(DistributionError::ZeroMass(sum));
        }
        let probs = raw.iter().map(|v| v / sum).collect();
        Ok(Self {
            probs,
            categories: Arc::clone(categories),
        })
    }

    /// Uniform distribution over all K categories.
    pub fn uniform(categories: &Arc<CategorySet>) -> Self {
        let k = categories.len();
        Self {
            probs: vec![1.0 / k as f64; k],
            categories: Arc::clone(categories),
        }
    }

    /// One-hot distribution on `index`.
    pub fn one_hot(
        index: usize,
        categories: &Arc<CategorySet>,
    ) -> Result<Self, DistributionError> {
        let k = categories.len();
        if index >= k {
            return Err(DistributionError::DimensionMismatch {
                expected: k,
                got: index,
            });
        }
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Ok(Self {
            probs,
            categories: Arc::clone(categories),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn categories(&self) -> &Arc<CategorySet> {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in bits, with the 0 * log2(0) = 0 convention.
    /// Always in [0, log2 K].
    pub fn entropy_bits(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum()
    }

    /// Smallest index attaining the maximum probability. Ties break toward
    /// the lower category index so replays are deterministic.
    pub fn dominant_index(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn same_categories(&self, other: &EmotionDistribution) -> bool {
        Arc::ptr_eq(&self.categories, &other.categories)
            || self.categories == other.categories
    }
}

impl fmt::Display for EmotionDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.probs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p:.4}")?;
        }
        write!(f, "]")
    }
}

fn validate_components(probs: &[f64], k: usize) -> Result<(), DistributionError> {
    if probs.len() != k {
        return Err(DistributionError::DimensionMismatch {
            expected: k,
            got: probs.len(),
        });
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() {
            return Err(DistributionError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(DistributionError::NegativeComponent { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn four_cats() -> Arc<CategorySet> {
        CategorySet::new(vec!["Neutral state", "Happiness", "Anger", "Sadness"]).unwrap()
    }

    #[test]
    fn category_set_rejects_degenerate_inputs() {
        assert!(matches!(
            CategorySet::new(vec!["only"]),
            Err(DistributionError::TooFewCategories(1))
        ));
        assert!(matches!(
            CategorySet::new(vec!["A", ""]),
            Err(DistributionError::BadCategoryName(_))
        ));
        // Case-insensitive duplicate.
        assert!(matches!(
            CategorySet::new(vec!["Anger", "anger"]),
            Err(DistributionError::BadCategoryName(_))
        ));
    }

    #[test]
    fn category_lookup_is_case_insensitive_and_trimmed() {
        let cats = four_cats();
        assert_eq!(cats.index_of("anger"), Some(2));
        assert_eq!(cats.index_of("  Neutral State "), Some(0));
        assert_eq!(cats.index_of("boredom"), None);
    }

    #[test]
    fn normalize_examples() {
        let cats = four_cats();
        let d = EmotionDistribution::normalize(&[2.0, 2.0, 0.0, 0.0], &cats).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5, 0.0, 0.0]);

        let d = EmotionDistribution::normalize(&[1.0, 0.0, 0.0, 0.0], &cats).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0, 0.0, 0.0]);

        let cats3 = CategorySet::new(vec!["a", "b", "c"]).unwrap();
        let d = EmotionDistribution::normalize(&[0.3, 0.2, 0.5], &cats3).unwrap();
        assert_eq!(d.probs(), &[0.3, 0.2, 0.5]);
    }

    #[test]
    fn normalize_error_paths() {
        let cats = four_cats();
        assert!(matches!(
            EmotionDistribution::normalize(&[0.0; 4], &cats),
            Err(DistributionError::ZeroMass(_))
        ));
        assert!(matches!(
            EmotionDistribution::normalize(&[1.0, -0.1, 0.0, 0.0], &cats),
            Err(DistributionError::NegativeComponent { index: 1, .. })
        ));
        assert!(matches!(
            EmotionDistribution::normalize(&[1.0, 1.0], &cats),
            Err(DistributionError::DimensionMismatch { expected: 4, got: 2 })
        ));
        assert!(matches!(
            EmotionDistribution::normalize(&[f64::NAN, 1.0, 0.0, 0.0], &cats),
            Err(DistributionError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn entropy_examples() {
        let cats = four_cats();
        let one_hot = EmotionDistribution::one_hot(0, &cats).unwrap();
        assert_eq!(one_hot.entropy_bits(), 0.0);

        let uniform = EmotionDistribution::uniform(&cats);
        assert!((uniform.entropy_bits() - 2.0).abs() < 1e-12);

        let half = EmotionDistribution::new(vec![0.5, 0.5, 0.0, 0.0], Arc::clone(&cats)).unwrap();
        // Independent arithmetic: -(0.5*log2 0.5)*2 = 1.
        assert!((half.entropy_bits() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_index_tie_breaks_low() {
        let cats = four_cats();
        let d = EmotionDistribution::new(vec![0.1, 0.7, 0.1, 0.1], Arc::clone(&cats)).unwrap();
        assert_eq!(d.dominant_index(), 1);

        let d = EmotionDistribution::new(vec![0.5, 0.5, 0.0, 0.0], Arc::clone(&cats)).unwrap();
        assert_eq!(d.dominant_index(), 0);

        let d = EmotionDistribution::uniform(&cats);
        assert_eq!(d.dominant_index(), 0);
    }

    #[test]
    fn normalize_is_idempotent() {
        let cats = four_cats();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 10.0).collect();
            if raw.iter().sum::<f64>() <= SIMPLEX_TOLERANCE {
                continue;
            }
            let once = EmotionDistribution::normalize(&raw, &cats).unwrap();
            let twice = EmotionDistribution::normalize(once.probs(), &cats).unwrap();
            for (a, b) in once.probs().iter().zip(twice.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominant_index_scale_invariant() {
        let cats = four_cats();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let scale = rng.random::<f64>() * 99.0 + 0.5;
            let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
            let a = EmotionDistribution::normalize(&raw, &cats);
            let b = EmotionDistribution::normalize(&scaled, &cats);
            if let (Ok(a), Ok(b)) = (a, b) {
                assert_eq!(a.dominant_index(), b.dominant_index());
            }
        }
    }

    #[test]
    fn entropy_bounds_and_permutation_invariance() {
        let cats = four_cats();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let Ok(d) = EmotionDistribution::normalize(&raw, &cats) else {
                continue;
            };
            let h = d.entropy_bits();
            assert!((0.0..=2.0 + 1e-12).contains(&h));

            let mut perm = d.probs().to_vec();
            perm.reverse();
            let p = EmotionDistribution::normalize(&perm, &cats).unwrap();
            assert!((p.entropy_bits() - h).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_zero_iff_one_hot() {
        let cats = four_cats();
        for i in 0..4 {
            let d = EmotionDistribution::one_hot(i, &cats).unwrap();
            assert_eq!(d.entropy_bits(), 0.0);
        }
        let near = EmotionDistribution::new(vec![0.999, 0.001, 0.0, 0.0], Arc::clone(&cats)).unwrap();
        assert!(near.entropy_bits() > 0.0);
    }

    #[test]
    fn normalized_sum_property_10k() {
        let cats = four_cats();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 10_000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 100.0).collect();
            if raw.iter().sum::<f64>() <= SIMPLEX_TOLERANCE {
                continue;
            }
            let d = EmotionDistribution::normalize(&raw, &cats).unwrap();
            let sum: f64 = d.probs().iter().sum();
            assert!((sum - 1.0).abs() <= SIMPLEX_TOLERANCE);
            assert!(d.probs().iter().all(|&p| p >= 0.0));
            checked += 1;
        }
    }
}
