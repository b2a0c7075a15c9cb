//! Multimodal model client: two JSON dialects, retry-until-float, bounded
//! concurrency and request spacing.
//!
//! Wire formats are documented in `docs/wire.md`; the mock server in
//! [`crate::mock`] mirrors them.

use std::future::Future;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompt::AssembledPrompt;

/// Header carrying the sample id; the mock server keys its script on it.
pub const SAMPLE_ID_HEADER: &str = "x-sample-id";
/// Header carrying the request tag (prompt variant label or `mesh`).
pub const REQUEST_TAG_HEADER: &str = "x-request-tag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// `POST {base_url}/chat/completions`
    ChatCompletions,
    /// `POST {base_url}/models/{model}:generateContent`
    GenerateContent,
}

impl Dialect {
    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::ChatCompletions => "chat_completions",
            Dialect::GenerateContent => "generate_content",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub dialect: Dialect,
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token; no auth when `None`.
    pub auth_token_env: Option<String>,
    /// Total requests allowed per sample, including the first.
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub min_request_spacing: Duration,
    /// Base delay before re-sending after a transport failure; doubles per
    /// consecutive failure, capped at 8x. Non-numeric answers are re-sent
    /// immediately.
    pub retry_backoff: Duration,
    pub request_timeout: Duration,
    /// Append-only JSON-lines log of every request/response pair.
    pub transcript_log: Option<PathBuf>,
}

impl EndpointConfig {
    pub fn new(dialect: Dialect, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            dialect,
            base_url: base_url.into(),
            model: model.into(),
            auth_token_env: None,
            max_retries: 10,
            max_in_flight: 4,
            min_request_spacing: Duration::ZERO,
            retry_backoff: Duration::from_millis(200),
            request_timeout: Duration::from_secs(600),
            transcript_log: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_retries < 1 {
            return Err(ClientError::InvalidConfig("max_retries must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(ClientError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(ClientError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        match self.dialect {
            Dialect::ChatCompletions => format!("{base}/chat/completions"),
            Dialect::GenerateContent => format!("{base}/models/{}:generateContent", self.model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("RetriesExhausted({attempts}): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    /// Retryable transport failure (5xx, 408, 429, connection errors).
    #[error("transient transport error: {0}")]
    TransientTransport(String),
    #[error("response body not understood: {0}")]
    MalformedBody(String),
    #[error("no confidence value in response")]
    NoConfidence,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("cannot read image {0}: {1}")]
    ImageUnreadable(PathBuf, String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
}

impl ClientError {
    /// Whether the identical request should be sent again.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ClientError::TransientTransport(_) | ClientError::MalformedBody(_) | ClientError::NoConfidence
        )
    }

    fn wants_backoff(&self) -> bool {
        matches!(self, ClientError::TransientTransport(_))
    }
}

/// Identifies one logical query; used for attempt accounting and for
/// selecting scripted responses in the mock server.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    pub sample_id: String,
    pub tag: Option<String>,
}

impl RequestKey {
    pub fn new(sample_id: impl Into<String>, tag: Option<String>) -> Self {
        RequestKey {
            sample_id: sample_id.into(),
            tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub confidence: f64,
    /// Requests sent for this sample, including the successful one.
    pub attempts: u32,
    pub prompt_token_estimate: usize,
    pub wall_time: Duration,
}

/// Returns the first numeric literal in `raw` whose value lies in [0, 1].
///
/// Literals are plain decimals (`0`, `1`, `0.85`, `.5`). Negative values,
/// scientific notation, percentages, fractions like `3/4` and digits glued to
/// letters are not confidence tokens.
pub fn extract_confidence(raw: &str) -> Option<f64> {
    let bytes = raw.as_bytes();
    let n = bytes.len();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut i = 0;
    while i < n {
        let starts_number = bytes[i].is_ascii_digit()
            || (bytes[i] == b'.' && i + 1 < n && bytes[i + 1].is_ascii_digit());
        if !starts_number {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < n && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < n && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        let end = i;

        let prev = start.checked_sub(1).map(|p| bytes[p]);
        let next = bytes.get(end).copied();
        let glued_before = prev.is_some_and(|b| is_word(b) || b == b'.' || b == b'/');
        let negative = prev == Some(b'-')
            && start
                .checked_sub(2)
                .map(|p| !bytes[p].is_ascii_alphanumeric())
                .unwrap_or(true);
        let glued_after = next.is_some_and(|b| is_word(b) || b == b'%')
            || (next == Some(b'/') && bytes.get(end + 1).is_some_and(u8::is_ascii_digit))
            || (next == Some(b'.') && bytes.get(end + 1).is_some_and(u8::is_ascii_digit));
        if glued_before || glued_after || negative {
            // skip the rest of this word so e.g. `1e-3` does not yield `3`
            while i < n && (is_word(bytes[i]) || matches!(bytes[i], b'.' | b'+' | b'-')) {
                i += 1;
            }
            continue;
        }
        if let Ok(v) = raw[start..end].parse::<f64>() {
            if (0.0..=1.0).contains(&v) {
                return Some(v);
            }
        }
    }
    None
}

/// One request/response round trip, no retries.
pub trait CompletionBackend: Sync {
    fn complete(
        &self,
        key: &RequestKey,
        prompt: &AssembledPrompt,
    ) -> impl Future<Output = Result<String, ClientError>> + Send;
}

/// Re-sends the identical request until the reply contains a confidence
/// literal or `max_retries` requests have been sent.
pub async fn retry_until_confidence<B: CompletionBackend>(
    backend: &B,
    key: &RequestKey,
    prompt: &AssembledPrompt,
    max_retries: u32,
    backoff: Duration,
) -> Result<ModelResponse, ClientError> {
    let started = Instant::now();
    let mut last = ClientError::NoConfidence;
    let mut consecutive_transport = 0u32;
    for attempt in 1..=max_retries {
        let outcome = match backend.complete(key, prompt).await {
            Ok(text) => match extract_confidence(&text) {
                Some(confidence) => {
                    return Ok(ModelResponse {
                        raw_text: text,
                        confidence,
                        attempts: attempt,
                        prompt_token_estimate: prompt.token_estimate,
                        wall_time: started.elapsed(),
                    })
                }
                None => ClientError::NoConfidence,
            },
            Err(e) => e,
        };
        if !outcome.is_retryable() {
            return Err(outcome);
        }
        if outcome.wants_backoff() {
            consecutive_transport += 1;
            if attempt < max_retries && !backoff.is_zero() {
                let factor = 1u32 << (consecutive_transport - 1).min(3);
                tokio::time::sleep(backoff * factor).await;
            }
        } else {
            consecutive_transport = 0;
        }
        last = outcome;
    }
    Err(ClientError::RetriesExhausted {
        attempts: max_retries,
        last: last.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct DispatchItem {
    pub key: RequestKey,
    pub prompt: AssembledPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub key: RequestKey,
    pub result: Result<ModelResponse, ClientError>,
}

/// HTTP client for one endpoint. Shareable across tasks; the in-flight
/// semaphore and spacing clock are its only shared mutable state.
pub struct MllmClient {
    cfg: EndpointConfig,
    http: reqwest::Client,
    token: Option<String>,
    in_flight: Semaphore,
    next_start: tokio::sync::Mutex<Option<Instant>>,
    transcript: Option<Mutex<std::fs::File>>,
}

impl MllmClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let token = match &cfg.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ClientError::Auth(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        let transcript = match &cfg.transcript_log {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ClientError::InvalidConfig(format!("{}: {e}", path.display())))?,
            )),
            None => None,
        };
        Ok(MllmClient {
            in_flight: Semaphore::new(cfg.max_in_flight),
            next_start: tokio::sync::Mutex::new(None),
            cfg,
            http,
            token,
            transcript,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub async fn query_with_retry(
        &self,
        key: &RequestKey,
        prompt: &AssembledPrompt,
    ) -> Result<ModelResponse, ClientError> {
        retry_until_confidence(self, key, prompt, self.cfg.max_retries, self.cfg.retry_backoff).await
    }

    /// Queries every item concurrently (bounded by `max_in_flight`) and
    /// returns outcomes in input order. Per-item failures do not stop the
    /// batch.
    pub async fn run_batch(&self, items: &[DispatchItem]) -> Vec<BatchOutcome> {
        let futures = items.iter().map(|item| async move {
            BatchOutcome {
                key: item.key.clone(),
                result: self.query_with_retry(&item.key, &item.prompt).await,
            }
        });
        futures::future::join_all(futures).await
    }

    async fn wait_for_slot(&self) {
        if self.cfg.min_request_spacing.is_zero() {
            return;
        }
        let start = {
            let mut next = self.next_start.lock().await;
            let now = Instant::now();
            let start = next.map_or(now, |t| t.max(now));
            *next = Some(start + self.cfg.min_request_spacing);
            start
        };
        tokio::time::sleep_until(start.into()).await;
    }

    fn log_exchange(&self, key: &RequestKey, prompt: &AssembledPrompt, status: Option<u16>, body: &str) {
        let Some(file) = &self.transcript else { return };
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let record = json!({
            "ts_ms": ts_ms,
            "sample_id": key.sample_id,
            "tag": key.tag,
            "dialect": self.cfg.dialect.as_str(),
            "model": self.cfg.model,
            "prompt": prompt.text,
            "image": prompt.image_ref,
            "status": status,
            "response": body,
        });
        if let Ok(mut f) = file.lock() {
            let _ = writeln!(f, "{record}");
        }
    }
}

impl CompletionBackend for MllmClient {
    async fn complete(&self, key: &RequestKey, prompt: &AssembledPrompt) -> Result<String, ClientError> {
        let image = tokio::fs::read(&prompt.image_ref)
            .await
            .map_err(|e| ClientError::ImageUnreadable(prompt.image_ref.clone(), e.to_string()))?;
        let body = request_body(self.cfg.dialect, &self.cfg.model, &prompt.text, &image, &prompt.image_ref);

        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        self.wait_for_slot().await;

        let mut req = self
            .http
            .post(self.cfg.url())
            .header(SAMPLE_ID_HEADER, &key.sample_id)
            .json(&body);
        if let Some(tag) = &key.tag {
            req = req.header(REQUEST_TAG_HEADER, tag);
        }
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => {
                self.log_exchange(key, prompt, None, &e.to_string());
                return Err(ClientError::TransientTransport(e.to_string()));
            }
        };
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ClientError::TransientTransport(e.to_string()))?;
        self.log_exchange(key, prompt, Some(status.as_u16()), &text);

        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(ClientError::Auth(format!("HTTP {status}")));
        }
        if status.is_server_error()
            || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            || status == reqwest::StatusCode::REQUEST_TIMEOUT
        {
            return Err(ClientError::TransientTransport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ClientError::Transport(format!("HTTP {status}: {text}")));
        }
        response_text(self.cfg.dialect, &text)
    }
}

pub fn image_mime(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("tif" | "tiff") => "image/tiff",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

/// Request body for one dialect. Generation parameters are deliberately
/// absent so that server-side defaults apply.
pub fn request_body(dialect: Dialect, model: &str, text: &str, image: &[u8], image_path: &Path) -> Value {
    let data = base64::engine::general_purpose::STANDARD.encode(image);
    let mime = image_mime(image_path);
    match dialect {
        Dialect::ChatCompletions => json!({
            "model": model,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": text },
                    { "type": "image_url", "image_url": { "url": format!("data:{mime};base64,{data}") } }
                ]
            }]
        }),
        Dialect::GenerateContent => json!({
            "contents": [{
                "role": "user",
                "parts": [
                    { "text": text },
                    { "inline_data": { "mime_type": mime, "data": data } }
                ]
            }]
        }),
    }
}

/// Extracts the model's text from a response body. Every text part is
/// kept, including reasoning text, in order.
pub fn response_text(dialect: Dialect, body: &str) -> Result<String, ClientError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ClientError::MalformedBody(e.to_string()))?;
    let missing = || ClientError::MalformedBody("missing response text".into());
    match dialect {
        Dialect::ChatCompletions => {
            let content = v.pointer("/choices/0/message/content").ok_or_else(missing)?;
            match content {
                Value::String(s) => Ok(s.clone()),
                Value::Array(parts) => Ok(parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("")),
                _ => Err(missing()),
            }
        }
        Dialect::GenerateContent => {
            let parts = v
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .ok_or_else(missing)?;
            Ok(parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""))
        }
    }
}
