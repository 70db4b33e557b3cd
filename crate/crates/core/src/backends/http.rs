//! Chat-completions HTTP backend: text prompt plus inline base64 audio,
//! sampling `n` choices with token log-probabilities.

use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use crate::labels::AnnotatedUtterance;

use super::{Backend, BackendConfig, BackendError, RawResponse};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: BackendConfig,
    bearer_token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let bearer_token = match &config.credential_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            client,
            config,
            bearer_token,
        })
    }

    fn audio_payload(&self, utterance: &AnnotatedUtterance) -> Result<(String, String), BackendError> {
        let bytes =
            std::fs::read(&utterance.audio_path).map_err(|source| BackendError::AudioRead {
                path: utterance.audio_path.clone(),
                source,
            })?;
        let format = self
            .config
            .audio_format
            .clone()
            .or_else(|| {
                Path::new(&utterance.audio_path)
                    .extension()
                    .map(|ext| ext.to_string_lossy().to_lowercase())
            })
            .unwrap_or_else(|| "wav".to_string());
        Ok((BASE64.encode(bytes), format))
    }

    /// POST with retries and exponential backoff. Transport failures, error
    /// statuses, and malformed bodies all retry; whatever failure remains
    /// after the last attempt becomes the Transport error.
    fn post_chat(&self, body: &serde_json::Value, want: usize) -> Result<Vec<RawResponse>, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last_detail = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.retry_backoff_ms << (attempt - 1);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self.client.post(&self.config.endpoint_url).json(body);
            if let Some(token) = &self.bearer_token {
                request = request.header("Authorization", format!("Bearer {token}"));
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_detail = format!("request failed: {e}");
                    continue;
                }
            };
            let status = response.status();
            let text = match response.text() {
                Ok(t) => t,
                Err(e) => {
                    last_detail = format!("body read failed: {e}");
                    continue;
                }
            };
            if !status.is_success() {
                last_detail = format!("status {status}: {}", truncate(&text, 200));
                continue;
            }
            match parse_chat_response(&text, want, self.config.normalize_loglik) {
                Ok(responses) => return Ok(responses),
                Err(detail) => {
                    last_detail = detail;
                    continue;
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            detail: last_detail,
        })
    }
}

impl Backend for HttpBackend {
    fn sample(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
        count: usize,
    ) -> Result<Vec<RawResponse>, BackendError> {
        let (audio_b64, format) = self.audio_payload(utterance)?;
        let body = build_chat_body(&self.config, prompt, &audio_b64, &format, count, true);
        self.post_chat(&body, count)
    }

    fn complete_one(
        &self,
        utterance: &AnnotatedUtterance,
        prompt: &str,
    ) -> Result<String, BackendError> {
        let (audio_b64, format) = self.audio_payload(utterance)?;
        let body = build_chat_body(&self.config, prompt, &audio_b64, &format, 1, false);
        let responses = self.post_chat(&body, 1)?;
        Ok(responses.into_iter().next().expect("exactly one").text)
    }
}

fn truncate(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

/// The chat request: one user message with a text part and an audio part.
fn build_chat_body(
    config: &BackendConfig,
    prompt: &str,
    audio_b64: &str,
    format: &str,
    n: usize,
    logprobs: bool,
) -> serde_json::Value {
    json!({
        "model": config.model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "input_audio", "input_audio": {"data": audio_b64, "format": format}},
            ],
        }],
        "temperature": config.sampling_temperature,
        "n": n,
        "logprobs": logprobs,
    })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    logprobs: Option<LogProbs>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct LogProbs {
    #[serde(default)]
    content: Vec<TokenLogProb>,
}

#[derive(Deserialize)]
struct TokenLogProb {
    logprob: f64,
}

/// Decode the response body. α_b is the sum of token log-probabilities;
/// endpoints that return none yield α = 0 with the `logprobs_missing` flag
/// (uniform weights downstream). A wrong choice count is malformed: partial
/// batches must surface as transport errors, not short candidate lists.
fn parse_chat_response(
    body: &str,
    want: usize,
    normalize_loglik: bool,
) -> Result<Vec<RawResponse>, String> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| format!("malformed body: {e}"))?;
    if parsed.choices.len() != want {
        return Err(format!(
            "partial batch: wanted {want} choices, got {}",
            parsed.choices.len()
        ));
    }
    Ok(parsed
        .choices
        .into_iter()
        .map(|choice| {
            let (log_likelihood, logprobs_missing) = match &choice.logprobs {
                Some(lp) if !lp.content.is_empty() => {
                    let sum: f64 = lp.content.iter().map(|t| t.logprob).sum();
                    let alpha = if normalize_loglik {
                        sum / lp.content.len() as f64
                    } else {
                        sum
                    };
                    (alpha, false)
                }
                _ => (0.0, true),
            };
            RawResponse {
                text: choice.message.content.unwrap_or_default(),
                log_likelihood,
                logprobs_missing,
            }
        })
        .collect())
}
