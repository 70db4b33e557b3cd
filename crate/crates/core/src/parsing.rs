//! Output parsing: a five-strategy cascade that converts raw model text
//! into an [`EmotionDistribution`], plus verifier-score extraction.
//!
//! Strategies run in fixed order and the first success wins:
//!
//! 1. json-dict: a `{...}` block whose keys name categories
//! 2. emotion-list: a `[...]` block of emotion labels, uniform over hits
//! 3. float-list: a `[...]` block of two or more numbers, padded or
//!    trimmed to the category count and normalized
//! 4. keyword-match: emotion keywords in free prose, one-hot on a single
//!    hit and uniform over several
//!
//! Anything else is rejected, including a lone float. Code fences are
//! stripped before structured extraction. The parser is total: malformed
//! input yields a rejected outcome, never a panic.

use std::borrow::Cow;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{CategorySet, EmotionDistribution};

#[derive(Error, Debug)]
pub enum ParseError {
    #[error("no decimal literal found in verifier reply")]
    NoNumberFound,
}

/// Which cascade stage produced (or failed to produce) a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStrategy {
    JsonDict,
    EmotionList,
    FloatList,
    KeywordMatch,
    Rejected,
}

impl std::fmt::Display for ParseStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::JsonDict => "json-dict",
            Self::EmotionList => "emotion-list",
            Self::FloatList => "float-list",
            Self::KeywordMatch => "keyword-match",
            Self::Rejected => "rejected",
        })
    }
}

/// Result of one parse: the distribution is present exactly when the
/// strategy is not `Rejected`.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub distribution: Option<EmotionDistribution>,
    pub strategy_used: ParseStrategy,
    pub raw_text: String,
}

impl ParseOutcome {
    fn accepted(distribution: EmotionDistribution, strategy: ParseStrategy, raw: &str) -> Self {
        Self {
            distribution: Some(distribution),
            strategy_used: strategy,
            raw_text: raw.to_string(),
        }
    }

    fn rejected(raw: &str) -> Self {
        Self {
            distribution: None,
            strategy_used: ParseStrategy::Rejected,
            raw_text: raw.to_string(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.distribution.is_some()
    }
}

/// How one cascade stage ended. `Reject` is terminal: the stage extracted
/// a structured answer whose mass clamps to zero, so later stages must not
/// reinterpret it.
enum StageOutcome {
    Hit(EmotionDistribution, ParseStrategy),
    Miss,
    Reject,
}

/// Run the cascade over raw model output.
pub fn parse_output(raw: &str, categories: &Arc<CategorySet>) -> ParseOutcome {
    let stripped = strip_code_fences(raw);
    let stages = [json_dict_stage, emotion_list_stage, float_list_stage];
    for stage in stages {
        match stage(&stripped, categories) {
            StageOutcome::Hit(d, strategy) => return ParseOutcome::accepted(d, strategy, raw),
            StageOutcome::Reject => return ParseOutcome::rejected(raw),
            StageOutcome::Miss => {}
        }
    }
    match keyword_stage(&stripped, categories) {
        Some(d) => ParseOutcome::accepted(d, ParseStrategy::KeywordMatch, raw),
        None => ParseOutcome::rejected(raw),
    }
}

/// Extract the first decimal literal from a verifier reply, clamped to
/// [0, 1].
pub fn parse_verifier_score(raw: &str) -> Result<f64, ParseError> {
    let found = float_regex().find(raw).ok_or(ParseError::NoNumberFound)?;
    let value: f64 = found
        .as_str()
        .parse()
        .map_err(|_| ParseError::NoNumberFound)?;
    Ok(value.clamp(0.0, 1.0))
}

fn float_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("static regex compiles")
    })
}

/// Drop fence markers (with any language tag) so fenced payloads are
/// visible to the structured stages.
fn strip_code_fences(raw: &str) -> Cow<'_, str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"```[A-Za-z0-9]*").expect("static regex compiles"));
    if raw.contains("```") {
        re.replace_all(raw, " ")
    } else {
        Cow::Borrowed(raw)
    }
}

/// Top-level balanced `open...close` blocks, in order of appearance.
fn balanced_blocks(text: &str, open: u8, close: u8) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != open {
            i += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut end = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            if b == open {
                depth += 1;
            } else if b == close {
                depth -= 1;
                if depth == 0 {
                    end = Some(j);
                    break;
                }
            }
        }
        match end {
            // Both delimiters are ASCII, so the slice ends on char
            // boundaries.
            Some(j) => {
                blocks.push(&text[i..=j]);
                i = j + 1;
            }
            None => break,
        }
    }
    blocks
}

fn numeric_value(value: &serde_json::Value) -> Option<f64> {
    match value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Map category-named keys to a vector: keys match case-insensitively with
/// whitespace trimmed, unknown keys are ignored, missing keys stay 0, and
/// negative values clamp to 0.
fn dict_to_distribution(
    map: &serde_json::Map<String, serde_json::Value>,
    categories: &Arc<CategorySet>,
) -> StageOutcome {
    let mut probs = vec![0.0f64; categories.len()];
    let mut matched = false;
    for (key, value) in map {
        let Some(idx) = categories.index_of(key) else {
            continue;
        };
        let Some(v) = numeric_value(value) else {
            continue;
        };
        if !v.is_finite() {
            continue;
        }
        matched = true;
        probs[idx] = v.max(0.0);
    }
    if !matched {
        return StageOutcome::Miss;
    }
    match EmotionDistribution::normalize(&probs, categories) {
        Ok(d) => StageOutcome::Hit(d, ParseStrategy::JsonDict),
        Err(_) => StageOutcome::Reject,
    }
}

fn json_dict_stage(stripped: &str, categories: &Arc<CategorySet>) -> StageOutcome {
    for block in balanced_blocks(stripped, b'{', b'}') {
        let parsed = serde_json::from_str::<serde_json::Value>(block)
            .ok()
            .or_else(|| {
                // Python-style dicts arrive single-quoted; swap quotes only
                // when the block has no double quotes the swap could break.
                if block.contains('\'') && !block.contains('"') {
                    serde_json::from_str(&block.replace('\'', "\"")).ok()
                } else {
                    None
                }
            });
        let Some(serde_json::Value::Object(map)) = parsed else {
            continue;
        };
        match dict_to_distribution(&map, categories) {
            StageOutcome::Miss => {
                // Models sometimes wrap the emotion dict under a named key;
                // descend one level before giving up on this block.
                for value in map.values() {
                    if let serde_json::Value::Object(inner) = value {
                        match dict_to_distribution(inner, categories) {
                            StageOutcome::Miss => continue,
                            other => return other,
                        }
                    }
                }
            }
            other => return other,
        }
    }
    StageOutcome::Miss
}

fn emotion_list_stage(stripped: &str, categories: &Arc<CategorySet>) -> StageOutcome {
    let lexicon = keyword_lexicon(categories);
    for block in balanced_blocks(stripped, b'[', b']') {
        let inner = &block[1..block.len() - 1];
        let mut hits: Vec<usize> = Vec::new();
        for entry in inner.split(',') {
            let entry = entry.trim().trim_matches(|c| c == '\'' || c == '"');
            let words = tokenize(entry);
            if words.is_empty() {
                continue;
            }
            // An entry counts only when it IS a known label, not when it
            // merely contains one; unrecognized entries are ignored.
            let matched = lexicon
                .iter()
                .find(|(_, keywords)| keywords.iter().any(|kw| kw[..] == words[..]));
            if let Some((idx, _)) = matched {
                if !hits.contains(idx) {
                    hits.push(*idx);
                }
            }
        }
        if hits.is_empty() {
            continue;
        }
        return StageOutcome::Hit(
            uniform_over(&hits, categories),
            ParseStrategy::EmotionList,
        );
    }
    StageOutcome::Miss
}

fn float_list_stage(stripped: &str, categories: &Arc<CategorySet>) -> StageOutcome {
    for block in balanced_blocks(stripped, b'[', b']') {
        let values: Vec<f64> = float_regex()
            .find_iter(block)
            .filter_map(|m| m.as_str().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .collect();
        // A lone float is never a distribution; the rejection rule for
        // single floats falls out of this bound.
        if values.len() < 2 {
            continue;
        }
        let mut probs: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        probs.resize(categories.len(), 0.0);
        return match EmotionDistribution::normalize(&probs, categories) {
            Ok(d) => StageOutcome::Hit(d, ParseStrategy::FloatList),
            Err(_) => StageOutcome::Reject,
        };
    }
    StageOutcome::Miss
}

fn keyword_stage(stripped: &str, categories: &Arc<CategorySet>) -> Option<EmotionDistribution> {
    let tokens = tokenize(stripped);
    let lexicon = keyword_lexicon(categories);
    let mut hits: Vec<usize> = Vec::new();
    for (idx, keywords) in &lexicon {
        if keywords.iter().any(|kw| contains_sequence(&tokens, kw)) {
            hits.push(*idx);
        }
    }
    if hits.is_empty() {
        return None;
    }
    Some(uniform_over(&hits, categories))
}

fn uniform_over(hits: &[usize], categories: &Arc<CategorySet>) -> EmotionDistribution {
    let mut probs = vec![0.0; categories.len()];
    for &idx in hits {
        probs[idx] = 1.0;
    }
    EmotionDistribution::normalize(&probs, categories).expect("hit mass is positive")
}

/// Inflection families: a category word in one family pulls in the whole
/// family as keywords.
const INFLECTION_GROUPS: &[&[&str]] = &[
    &["neutral"],
    &["happy", "happiness"],
    &["anger", "angry"],
    &["sad", "sadness"],
    &["disgust", "disgusted"],
    &["fear", "fearful", "afraid"],
    &["surprise", "surprised"],
    &["contempt"],
    &["frustration", "frustrated"],
    &["excitement", "excited"],
];

/// Category-name words too generic to identify an emotion on their own.
const GENERIC_WORDS: &[&str] = &["state", "emotion", "other"];

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Keyword token sequences per category index.
fn keyword_lexicon(categories: &CategorySet) -> Vec<(usize, Vec<Vec<String>>)> {
    categories
        .names()
        .iter()
        .enumerate()
        .map(|(idx, name)| (idx, category_keywords(name)))
        .collect()
}

fn category_keywords(name: &str) -> Vec<Vec<String>> {
    let mut keywords: Vec<Vec<String>> = Vec::new();
    let name_tokens = tokenize(name);
    if !name_tokens.is_empty() {
        keywords.push(name_tokens.clone());
    }
    for word in &name_tokens {
        if word.len() < 3 || GENERIC_WORDS.contains(&word.as_str()) {
            continue;
        }
        match INFLECTION_GROUPS
            .iter()
            .find(|group| group.contains(&word.as_str()))
        {
            Some(group) => {
                keywords.extend(group.iter().map(|variant| vec![variant.to_string()]));
            }
            None => keywords.push(vec![word.clone()]),
        }
    }
    keywords.sort();
    keywords.dedup();
    keywords
}

fn contains_sequence(tokens: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= tokens.len()
        && tokens.windows(needle.len()).any(|window| window == needle)
}
