//! Evaluation toolkit for ambiguous speech emotion recognition with
//! audio-language-model backends and test-time scaling.
//!
//! The pipeline, end to end:
//!
//! 1. [`labels`] ingests annotation manifests and turns per-rater labels into
//!    empirical emotion distributions (soft labels) with entropy-based
//!    ambiguity bins.
//! 2. [`prompts`] renders prediction and verifier prompts for a configured
//!    category set.
//! 3. [`backends`] generates scored candidate predictions, either from a
//!    remote chat-style endpoint with audio input or from a deterministic
//!    simulated backend for offline runs.
//! 4. [`parsing`] recovers a probability vector from whatever text a model
//!    produced, via a fixed cascade of strategies.
//! 5. [`tts`] reduces a candidate set to one final distribution per utterance
//!    using one of six strategies (baseline, cot, bon, w-bon, alm-v, w-alm-v).
//! 6. [`metrics`] scores predictions against ground truth (JS divergence,
//!    Bhattacharyya coefficient, R², accuracy, macro-F1) with per-bin medians.
//! 7. [`harness`] ties it together: run config, candidate cache, resumable
//!    generation, and report emission.

pub mod backends;
pub mod distributions;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod parsing;
pub mod prompts;
pub mod tts;

pub use backends::{Backend, BackendConfig, Candidate};
pub use distributions::{CategorySet, DistributionError, EmotionDistribution};
pub use labels::{AnnotatedUtterance, EntropyBinning, LabeledExample};
pub use metrics::{AggregateReport, UtteranceResult};
pub use parsing::{ParseOutcome, ParseStrategy};
pub use tts::{AggregationTrace, Strategy, StrategyConfig};
