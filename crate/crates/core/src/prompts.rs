//! Prompt construction for the three prompt families: base distribution
//! prediction, its chain-of-thought variant, and the verifier rubric.
//!
//! Section texts may carry the placeholders `{categories}`,
//! `{json_structure}`, `{transcript}`, and `{candidate}`; rendering
//! substitutes them and is deterministic.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::CategorySet;
use crate::labels::AnnotatedUtterance;

#[derive(Error, Debug)]
pub enum PromptError {
    #[error("utterance {0} has no transcript but the prompt variant requires one")]
    MissingTranscript(String),
    #[error("prompt kind {0} cannot be used for prediction")]
    NotAPredictionKind(String),
    #[error("template section [{0}] is not recognized")]
    UnknownSection(String),
    #[error("cot-instructions section given for a {0} template")]
    MisplacedCotSection(String),
    #[error("template line {0} is outside any [section]")]
    OrphanContent(usize),
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Base,
    Cot,
    Verifier,
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Base => "base",
            Self::Cot => "cot",
            Self::Verifier => "verifier",
        })
    }
}

/// Whether the task asks about "the target utterance" (conversational
/// corpora with transcripts) or "the audio" (fixed-sentence corpora where
/// only delivery carries emotion).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptVariant {
    #[default]
    Utterance,
    Audio,
}

const DEFAULT_BACKGROUND: &str = "Two speakers are having a conversation.";

const DEFAULT_TASK: &str = "Predict the probability distribution of emotions for the target \
utterance from the following options: {categories}.\n\nConsider both the context and acoustic \
features.";

const UTTERANCE_SUBJECT: &str = "for the target utterance";
const AUDIO_SUBJECT: &str = "for the audio";

const DEFAULT_OUTPUT_CONSTRAINTS: &str = "1. Generate EXACTLY this JSON structure:\n\
{json_structure}\n\
Before outputting, check if the format of your output is in accordance with the requirements I \
provided.\n\
2. Sum of probabilities must equal to 1.0.\n\
3. Do not include any explanations or text besides the dictionary.";

const DEFAULT_COT_INSTRUCTIONS: &str = "- First, carefully listen to the tone, intonation, \
pauses, vocal energy, and other acoustic features.\n\
- Second, examine the textual content, considering words, sentiment, and contextual cues.\n\
- Identify all emotional cues, even subtle ones.\n\
- For each emotion, evaluate if it is present. If multiple are present, estimate their relative \
strength and presence.";

const VERIFIER_BACKGROUND: &str =
    "You are evaluating a model's prediction for an emotion distribution task.";

const VERIFIER_TASK: &str = "Only scoring based on emotion content: how well does the \
distribution reflect the emotional content of the utterance and context?";

const VERIFIER_SCORING_GUIDE: &str = "- 0.0\u{2013}0.3: Clearly wrong or unrelated\n\
- 0.4\u{2013}0.7: Partially reasonable or somewhat mismatched\n\
- 0.8\u{2013}1.0: Good match to the expected emotional distribution\n\
- Reply ONLY with a number between 0.0 and 1.0.";

/// Section texts for one prompt family. `cot_instructions` is present
/// exactly for the cot kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub background: String,
    pub task_text: String,
    pub output_constraints: String,
    pub cot_instructions: Option<String>,
}

impl PromptTemplate {
    pub fn base_default() -> Self {
        Self {
            kind: PromptKind::Base,
            background: DEFAULT_BACKGROUND.to_string(),
            task_text: DEFAULT_TASK.to_string(),
            output_constraints: DEFAULT_OUTPUT_CONSTRAINTS.to_string(),
            cot_instructions: None,
        }
    }

    pub fn cot_default() -> Self {
        Self {
            kind: PromptKind::Cot,
            cot_instructions: Some(DEFAULT_COT_INSTRUCTIONS.to_string()),
            ..Self::base_default()
        }
    }

    pub fn verifier_default() -> Self {
        Self {
            kind: PromptKind::Verifier,
            background: VERIFIER_BACKGROUND.to_string(),
            task_text: VERIFIER_TASK.to_string(),
            output_constraints: VERIFIER_SCORING_GUIDE.to_string(),
            cot_instructions: None,
        }
    }

    pub fn default_for(kind: PromptKind) -> Self {
        match kind {
            PromptKind::Base => Self::base_default(),
            PromptKind::Cot => Self::cot_default(),
            PromptKind::Verifier => Self::verifier_default(),
        }
    }

    /// Load section overrides from a plain-text template file. Sections are
    /// introduced by `[background]`, `[task]`, `[cot-instructions]`, or
    /// `[output-constraints]` lines; anything missing keeps its default.
    pub fn from_file(kind: PromptKind, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_sections(kind, &text)
    }

    pub fn from_sections(kind: PromptKind, text: &str) -> Result<Self, PromptError> {
        let mut template = Self::default_for(kind);
        let mut current: Option<String> = None;
        let mut body = String::new();

        let apply = |section: &Option<String>, body: &str, template: &mut Self| {
            if let Some(name) = section {
                let body = body.trim().to_string();
                match name.as_str() {
                    "background" => template.background = body,
                    "task" => template.task_text = body,
                    "output-constraints" => template.output_constraints = body,
                    "cot-instructions" => template.cot_instructions = Some(body),
                    _ => unreachable!("section names validated before buffering"),
                }
            }
        };

        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
                let known = ["background", "task", "output-constraints", "cot-instructions"];
                if !known.contains(&name) {
                    return Err(PromptError::UnknownSection(name.to_string()));
                }
                if name == "cot-instructions" && kind != PromptKind::Cot {
                    return Err(PromptError::MisplacedCotSection(kind.to_string()));
                }
                apply(&current, &body, &mut template);
                current = Some(name.to_string());
                body.clear();
                continue;
            }
            if current.is_none() {
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                return Err(PromptError::OrphanContent(idx + 1));
            }
            body.push_str(line);
            body.push('\n');
        }
        apply(&current, &body, &mut template);
        Ok(template)
    }
}

/// The three templates plus the dataset-level prompt variant.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub base: PromptTemplate,
    pub cot: PromptTemplate,
    pub verifier: PromptTemplate,
    pub variant: PromptVariant,
}

impl PromptSet {
    pub fn defaults(variant: PromptVariant) -> Self {
        Self {
            base: PromptTemplate::base_default(),
            cot: PromptTemplate::cot_default(),
            verifier: PromptTemplate::verifier_default(),
            variant,
        }
    }

    /// Override the scenario background on the prediction templates (a
    /// per-dataset configuration field).
    pub fn with_background(mut self, background: &str) -> Self {
        self.base.background = background.to_string();
        self.cot.background = background.to_string();
        self
    }

    pub fn prediction_prompt(
        &self,
        utterance: &AnnotatedUtterance,
        categories: &CategorySet,
        kind: PromptKind,
    ) -> Result<String, PromptError> {
        let template = match kind {
            PromptKind::Base => &self.base,
            PromptKind::Cot => &self.cot,
            PromptKind::Verifier => {
                return Err(PromptError::NotAPredictionKind(kind.to_string()))
            }
        };
        let transcript = match self.variant {
            PromptVariant::Utterance => Some(
                utterance
                    .transcript
                    .as_deref()
                    .ok_or_else(|| PromptError::MissingTranscript(utterance.utterance_id.clone()))?,
            ),
            PromptVariant::Audio => None,
        };

        let mut sections = Vec::new();
        sections.push(format!(
            "Background\n{}",
            substitute(&template.background, categories, transcript, None)
        ));
        if let Some(transcript) = transcript {
            sections.push(format!("Target Utterance\n\"{transcript}\""));
        }
        sections.push(format!(
            "Task\n{}",
            substitute(&self.task_for_variant(template), categories, transcript, None)
        ));
        if let Some(cot) = &template.cot_instructions {
            sections.push(format!(
                "CoT Instructions\n{}",
                substitute(cot, categories, transcript, None)
            ));
        }
        sections.push(format!(
            "Output Constraints\n{}",
            substitute(&template.output_constraints, categories, transcript, None)
        ));
        Ok(sections.join("\n\n"))
    }

    pub fn verifier_prompt(&self, candidate_raw: &str, categories: &CategorySet) -> String {
        let user_prompt = substitute(&self.task_for_variant(&self.base), categories, None, None);
        let sections = [
            format!(
                "Background\n{}",
                substitute(&self.verifier.background, categories, None, Some(candidate_raw))
            ),
            format!("User Prompt\n{user_prompt}"),
            format!("Model Output\n{candidate_raw}"),
            format!(
                "Task\n{}",
                substitute(&self.verifier.task_text, categories, None, Some(candidate_raw))
            ),
            format!(
                "Scoring Guide\n{}",
                substitute(
                    &self.verifier.output_constraints,
                    categories,
                    None,
                    Some(candidate_raw)
                )
            ),
        ];
        sections.join("\n\n")
    }

    /// The task subject shifts per corpus style: conversational corpora ask
    /// about the target utterance, fixed-sentence corpora about the audio.
    fn task_for_variant(&self, template: &PromptTemplate) -> String {
        match self.variant {
            PromptVariant::Utterance => template.task_text.clone(),
            PromptVariant::Audio => template.task_text.replace(UTTERANCE_SUBJECT, AUDIO_SUBJECT),
        }
    }
}

/// Render the ordered category list in the prompt's bracketed form, e.g.
/// `['Neutral state', 'Happiness', 'Anger', 'Sadness']`.
pub fn category_list(categories: &CategorySet) -> String {
    let quoted: Vec<String> = categories
        .names()
        .iter()
        .map(|name| format!("'{name}'"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// The literal JSON schema line of the output constraints, e.g.
/// `{"Neutral state":float, "Happiness":float, ...}`.
pub fn json_structure(categories: &CategorySet) -> String {
    let fields: Vec<String> = categories
        .names()
        .iter()
        .map(|name| format!("\"{name}\":float"))
        .collect();
    format!("{{{}}}", fields.join(", "))
}

fn substitute(
    text: &str,
    categories: &CategorySet,
    transcript: Option<&str>,
    candidate: Option<&str>,
) -> String {
    let mut out = text.replace("{categories}", &category_list(categories));
    out = out.replace("{json_structure}", &json_structure(categories));
    if let Some(transcript) = transcript {
        out = out.replace("{transcript}", transcript);
    }
    if let Some(candidate) = candidate {
        out = out.replace("{candidate}", candidate);
    }
    out
}

/// Render a prediction prompt with the shipped default templates.
pub fn build_prediction_prompt(
    utterance: &AnnotatedUtterance,
    categories: &CategorySet,
    kind: PromptKind,
    variant: PromptVariant,
) -> Result<String, PromptError> {
    PromptSet::defaults(variant).prediction_prompt(utterance, categories, kind)
}

/// Render a verifier prompt with the shipped default templates. The
/// utterance is carried for the audio attachment at the backend layer; the
/// rubric text itself does not embed the transcript.
pub fn build_verifier_prompt(
    _utterance: &AnnotatedUtterance,
    candidate_raw: &str,
    categories: &CategorySet,
) -> String {
    PromptSet::defaults(PromptVariant::Utterance).verifier_prompt(candidate_raw, categories)
}
