//! Scriptable mock model server speaking both wire dialects.
//!
//! Script lines are `sample_id | attempt | kind | payload` with kind one of
//! `text`, `http_status`, `delay_ms` or `malformed` (payload sent verbatim as
//! the body). Several lines may share a `(sample_id, attempt)` pair, e.g. a
//! delay followed by a text reply.
//!
//! `sample_id` may be a bare id (`s01`), a tagged id (`short+human/s01`,
//! matched only for that request tag) or `*` (any sample). `attempt` is a
//! 1-based request number or `*` (any attempt). For attempt `k` the server
//! uses the entry for exactly `k`, else the `*` entry, else the highest
//! scripted attempt below `k`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::json;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::client::{Dialect, REQUEST_TAG_HEADER, SAMPLE_ID_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptAction {
    Text(String),
    HttpStatus(u16),
    DelayMs(u64),
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttemptSelector {
    Exact(u32),
    Any,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    entries: HashMap<String, BTreeMap<AttemptSelector, Vec<ScriptAction>>>,
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("port {0} already in use")]
    PortInUse(u16),
    #[error("bad script line {0}")]
    BadScript(usize),
    #[error("io: {0}")]
    Io(String),
}

impl MockScript {
    pub fn push(&mut self, key: &str, attempt: AttemptSelector, action: ScriptAction) {
        self.entries
            .entry(key.to_string())
            .or_default()
            .entry(attempt)
            .or_default()
            .push(action);
    }

    /// Scripts a sequence of text replies for attempts 1, 2, ...
    pub fn push_texts<S: AsRef<str>>(&mut self, key: &str, replies: &[S]) {
        for (i, r) in replies.iter().enumerate() {
            self.push(key, AttemptSelector::Exact(i as u32 + 1), ScriptAction::Text(r.as_ref().to_string()));
        }
    }

    pub fn parse(text: &str) -> Result<Self, MockError> {
        let mut script = MockScript::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.splitn(4, '|').map(str::trim).collect();
            let [key, attempt, kind, payload] = fields[..] else {
                return Err(MockError::BadScript(line));
            };
            if key.is_empty() {
                return Err(MockError::BadScript(line));
            }
            let attempt = match attempt {
                "*" => AttemptSelector::Any,
                n => match n.parse::<u32>() {
                    Ok(k) if k >= 1 => AttemptSelector::Exact(k),
                    _ => return Err(MockError::BadScript(line)),
                },
            };
            let action = match kind {
                "text" => ScriptAction::Text(unescape(payload)),
                "malformed" => ScriptAction::Malformed(unescape(payload)),
                "http_status" => ScriptAction::HttpStatus(
                    payload
                        .parse::<u16>()
                        .ok()
                        .filter(|s| (100..600).contains(s))
                        .ok_or(MockError::BadScript(line))?,
                ),
                "delay_ms" => ScriptAction::DelayMs(payload.parse().map_err(|_| MockError::BadScript(line))?),
                _ => return Err(MockError::BadScript(line)),
            };
            script.push(key, attempt, action);
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path).map_err(|e| MockError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes in a stable order (keys sorted) in the line format.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            for (attempt, actions) in &self.entries[key] {
                let attempt = match attempt {
                    AttemptSelector::Exact(k) => k.to_string(),
                    AttemptSelector::Any => "*".to_string(),
                };
                for a in actions {
                    let (kind, payload) = match a {
                        ScriptAction::Text(t) => ("text", escape(t)),
                        ScriptAction::Malformed(t) => ("malformed", escape(t)),
                        ScriptAction::HttpStatus(s) => ("http_status", s.to_string()),
                        ScriptAction::DelayMs(d) => ("delay_ms", d.to_string()),
                    };
                    out.push_str(&format!("{key} | {attempt} | {kind} | {payload}\n"));
                }
            }
        }
        out
    }

    fn resolve(&self, tag: Option<&str>, sample_id: &str, attempt: u32) -> Option<&[ScriptAction]> {
        let tagged = tag.map(|t| format!("{t}/{sample_id}"));
        let by_attempt = tagged
            .as_deref()
            .and_then(|k| self.entries.get(k))
            .or_else(|| self.entries.get(sample_id))
            .or_else(|| self.entries.get("*"))?;
        by_attempt
            .get(&AttemptSelector::Exact(attempt))
            .or_else(|| by_attempt.get(&AttemptSelector::Any))
            .or_else(|| {
                by_attempt
                    .range(..AttemptSelector::Exact(attempt))
                    .next_back()
                    .map(|(_, v)| v)
            })
            .map(Vec::as_slice)
    }
}

/// Payloads are single-line: `\n` stands for a newline and `\\` for a
/// backslash.
fn escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

struct MockState {
    script: MockScript,
    observed: Mutex<HashMap<String, u32>>,
}

fn request_key(tag: Option<&str>, sample_id: &str) -> String {
    match tag {
        Some(t) => format!("{t}/{sample_id}"),
        None => sample_id.to_string(),
    }
}

/// Running mock server; shuts down when dropped or on [`MockServer::shutdown`].
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and serves on the
    /// current tokio runtime.
    pub async fn start(script: MockScript, port: u16) -> Result<MockServer, MockError> {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AddrInUse => MockError::PortInUse(port),
                _ => MockError::Io(e.to_string()),
            })?;
        let addr = listener.local_addr().map_err(|e| MockError::Io(e.to_string()))?;
        let state = Arc::new(MockState {
            script,
            observed: Mutex::new(HashMap::new()),
        });
        let app = Router::new().fallback(handle).with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests observed for a sample, optionally under a request tag.
    pub fn requests_for(&self, tag: Option<&str>, sample_id: &str) -> u32 {
        let observed = self.state.observed.lock().unwrap();
        observed.get(&request_key(tag, sample_id)).copied().unwrap_or(0)
    }

    pub fn total_requests(&self) -> u32 {
        self.state.observed.lock().unwrap().values().sum()
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    /// Resolves once the server task exits.
    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn mock_serve(script: &Path, port: u16) -> Result<MockServer, MockError> {
    MockServer::start(MockScript::load(script)?, port).await
}

fn dialect_for(path: &str) -> Option<Dialect> {
    if path.ends_with(":generateContent") {
        Some(Dialect::GenerateContent)
    } else if path.ends_with("/chat/completions") {
        Some(Dialect::ChatCompletions)
    } else {
        None
    }
}

/// Reply body for `text` in the given dialect.
pub fn reply_body(dialect: Dialect, text: &str) -> String {
    match dialect {
        Dialect::ChatCompletions => json!({
            "id": "mock",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": { "role": "assistant", "content": text },
                "finish_reason": "stop"
            }]
        }),
        Dialect::GenerateContent => json!({
            "candidates": [{
                "content": { "role": "model", "parts": [{ "text": text }] },
                "finishReason": "STOP"
            }]
        }),
    }
    .to_string()
}

async fn handle(State(state): State<Arc<MockState>>, uri: Uri, headers: HeaderMap, _body: Bytes) -> Response {
    let Some(dialect) = dialect_for(uri.path()) else {
        return (StatusCode::NOT_FOUND, "unknown endpoint").into_response();
    };
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let Some(sample_id) = header(SAMPLE_ID_HEADER) else {
        return (StatusCode::BAD_REQUEST, "missing sample id header").into_response();
    };
    let tag = header(REQUEST_TAG_HEADER);
    let attempt = {
        let mut observed = state.observed.lock().unwrap();
        let n = observed.entry(request_key(tag.as_deref(), &sample_id)).or_insert(0);
        *n += 1;
        *n
    };
    let Some(actions) = state.script.resolve(tag.as_deref(), &sample_id, attempt) else {
        return (StatusCode::NOT_FOUND, format!("no script entry for {sample_id}")).into_response();
    };
    let mut text = String::new();
    for action in actions {
        match action {
            ScriptAction::DelayMs(ms) => tokio::time::sleep(Duration::from_millis(*ms)).await,
            ScriptAction::HttpStatus(code) => {
                let status = StatusCode::from_u16(*code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                return (status, json!({ "error": { "code": code } }).to_string()).into_response();
            }
            ScriptAction::Malformed(body) => return (StatusCode::OK, body.clone()).into_response(),
            ScriptAction::Text(t) => text.push_str(t),
        }
    }
    (
        StatusCode::OK,
        [("content-type", "application/json")],
        reply_body(dialect, &text),
    )
        .into_response()
}
