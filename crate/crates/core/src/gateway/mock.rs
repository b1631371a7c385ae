//! Loopback OpenAI-compatible server driven by a reply script.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::oneshot;

use super::{ChatMessage, ModelEndpoint, Role};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("mock script has no entries and no default reply")]
    EmptyScript,
    #[error("entry {index}: bad regex: {message}")]
    BadRegex { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("script: {0}")]
    Parse(String),
}

/// Conditions on an incoming request. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Matcher {
    /// Substring of the system message.
    pub system: Option<String>,
    /// Substrings of the non-system conversation text.
    pub contains: Vec<String>,
    /// Substrings that must be absent from the non-system conversation text.
    pub excludes: Vec<String>,
    /// Substring of the last message.
    pub last: Option<String>,
    /// Regex over the non-system conversation text.
    pub regex: Option<String>,
    /// Number of assistant messages already in the conversation.
    pub turn: Option<usize>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockToolCall {
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MockReply {
    Text { text: String },
    Json { value: Value },
    ToolCalls {
        #[serde(default)]
        text: Option<String>,
        calls: Vec<MockToolCall>,
    },
    /// Replies with the last message's content.
    Echo,
    Status {
        code: u16,
        #[serde(default)]
        message: String,
    },
    Embedding { vector: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match")]
    pub matcher: Matcher,
    pub reply: MockReply,
    /// Consumed after this many uses; unlimited when absent.
    #[serde(default)]
    pub times: Option<usize>,
}

/// Entries are tried in order; the first match wins. Requests nothing
/// matches get `default`, or HTTP 422 when there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub default: Option<MockReply>,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

fn default_dim() -> usize {
    64
}

impl Default for MockScript {
    fn default() -> Self {
        Self { entries: Vec::new(), default: None, latency_ms: 0, embedding_dim: default_dim() }
    }
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(mut self, matcher: Matcher, reply: MockReply) -> Self {
        self.entries.push(ScriptEntry { matcher, reply, times: None });
        self
    }

    pub fn once(mut self, matcher: Matcher, reply: MockReply) -> Self {
        self.entries.push(ScriptEntry { matcher, reply, times: Some(1) });
        self
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, MockError> {
        toml::from_str(text).map_err(|e| MockError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, MockError> {
        serde_json::from_str(text).map_err(|e| MockError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }
}

impl Matcher {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn system(s: impl Into<String>) -> Self {
        Self { system: Some(s.into()), ..Self::default() }
    }

    pub fn contains(s: impl Into<String>) -> Self {
        Self { contains: vec![s.into()], ..Self::default() }
    }

    pub fn and_contains(mut self, s: impl Into<String>) -> Self {
        self.contains.push(s.into());
        self
    }

    pub fn and_excludes(mut self, s: impl Into<String>) -> Self {
        self.excludes.push(s.into());
        self
    }

    pub fn at_turn(mut self, turn: usize) -> Self {
        self.turn = Some(turn);
        self
    }
}

impl MockReply {
    pub fn text(t: impl Into<String>) -> Self {
        MockReply::Text { text: t.into() }
    }

    pub fn tool(name: &str, arguments: Value) -> Self {
        MockReply::ToolCalls { text: None, calls: vec![MockToolCall { name: name.into(), arguments }] }
    }

    pub fn tools(calls: Vec<(&str, Value)>) -> Self {
        MockReply::ToolCalls {
            text: None,
            calls: calls.into_iter().map(|(n, a)| MockToolCall { name: n.into(), arguments: a }).collect(),
        }
    }
}

/// What a responder sees of a chat request.
#[derive(Debug, Clone)]
pub struct MockRequest {
    pub model: String,
    pub system: String,
    pub messages: Vec<ChatMessage>,
    /// All non-system message contents joined by newlines.
    pub conversation: String,
    pub last: String,
    pub turn: usize,
}

/// Programmatic replies, consulted before the script.
pub type Responder = Arc<dyn Fn(&MockRequest) -> Option<MockReply> + Send + Sync>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockStats {
    pub requests: u64,
    pub chat_requests: u64,
    pub embedding_requests: u64,
    pub in_flight: u64,
    pub peak_in_flight: u64,
    pub unmatched: u64,
    /// Requests per last-message text.
    pub attempts_by_prompt: BTreeMap<String, u64>,
}

struct Inner {
    script: MockScript,
    regexes: Vec<Option<Regex>>,
    uses: Vec<usize>,
    counter: u64,
    stats: MockStats,
}

#[derive(Clone)]
struct Shared {
    inner: Arc<Mutex<Inner>>,
    responder: Option<Responder>,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer").field("addr", &self.addr).finish()
    }
}

/// Starts a loopback mock and returns an endpoint for `model_id` on it.
pub async fn mock_model(script: MockScript, model_id: &str) -> Result<(ModelEndpoint, MockServer), MockError> {
    let server = MockServer::start(script).await?;
    Ok((server.endpoint(model_id), server))
}

impl MockServer {
    pub async fn start(script: MockScript) -> Result<Self, MockError> {
        Self::start_on(script, None, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub async fn start_with(script: MockScript, responder: Responder) -> Result<Self, MockError> {
        Self::start_on(script, Some(responder), SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub async fn start_on(script: MockScript, responder: Option<Responder>, addr: SocketAddr) -> Result<Self, MockError> {
        if script.entries.is_empty() && script.default.is_none() && responder.is_none() {
            return Err(MockError::EmptyScript);
        }
        let regexes = script
            .entries
            .iter()
            .enumerate()
            .map(|(index, e)| {
                e.matcher
                    .regex
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|err| MockError::BadRegex { index, message: err.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let uses = vec![0; script.entries.len()];
        let shared = Shared {
            inner: Arc::new(Mutex::new(Inner { script, regexes, uses, counter: 0, stats: MockStats::default() })),
            responder,
        };
        let app = Router::new()
            .route("/v1/chat/completions", post(chat_handler))
            .route("/chat/completions", post(chat_handler))
            .route("/v1/embeddings", post(embed_handler))
            .route("/embeddings", post(embed_handler))
            .with_state(shared.clone());
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self { addr, shared, shutdown: Some(tx), task: Some(task) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn endpoint(&self, model_id: &str) -> ModelEndpoint {
        ModelEndpoint::new(self.base_url(), model_id)
    }

    pub fn stats(&self) -> MockStats {
        self.shared.inner.lock().expect("mock lock").stats.clone()
    }

    pub fn set_latency(&self, ms: u64) {
        self.shared.inner.lock().expect("mock lock").script.latency_ms = ms;
    }

    /// Runs until the process is interrupted.
    pub async fn serve_forever(mut self) {
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

struct FlightGuard(Arc<Mutex<Inner>>);

impl FlightGuard {
    fn enter(inner: &Arc<Mutex<Inner>>) -> Self {
        let mut g = inner.lock().expect("mock lock");
        g.stats.requests += 1;
        g.stats.in_flight += 1;
        g.stats.peak_in_flight = g.stats.peak_in_flight.max(g.stats.in_flight);
        drop(g);
        Self(inner.clone())
    }
}

impl Drop for FlightGuard {
    fn drop(&mut self) {
        self.0.lock().expect("mock lock").stats.in_flight -= 1;
    }
}

fn content(m: &ChatMessage) -> &str {
    m.content.as_deref().unwrap_or("")
}

fn describe(model: String, messages: Vec<ChatMessage>) -> MockRequest {
    let system = messages.iter().filter(|m| m.role == Role::System).map(content).collect::<Vec<_>>().join("\n");
    let conversation = messages.iter().filter(|m| m.role != Role::System).map(content).collect::<Vec<_>>().join("\n");
    let last = messages.last().map(content).unwrap_or("").to_string();
    let turn = messages.iter().filter(|m| m.role == Role::Assistant).count();
    MockRequest { model, system, messages, conversation, last, turn }
}

fn matches(m: &Matcher, re: Option<&Regex>, req: &MockRequest) -> bool {
    m.system.as_deref().is_none_or(|s| req.system.contains(s))
        && m.contains.iter().all(|s| req.conversation.contains(s.as_str()))
        && !m.excludes.iter().any(|s| req.conversation.contains(s.as_str()))
        && m.last.as_deref().is_none_or(|s| req.last.contains(s))
        && re.is_none_or(|r| r.is_match(&req.conversation))
        && m.turn.is_none_or(|t| t == req.turn)
        && m.model.as_deref().is_none_or(|s| s == req.model)
}

fn pick(inner: &mut Inner, req: &MockRequest, embeddings: bool) -> Option<MockReply> {
    for i in 0..inner.script.entries.len() {
        let entry = &inner.script.entries[i];
        if matches!(entry.reply, MockReply::Embedding { .. }) != embeddings {
            continue;
        }
        if entry.times.is_some_and(|t| inner.uses[i] >= t) {
            continue;
        }
        if matches(&entry.matcher, inner.regexes[i].as_ref(), req) {
            inner.uses[i] += 1;
            return Some(entry.reply.clone());
        }
    }
    None
}

fn error_response(code: u16, message: &str) -> Response {
    let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(json!({ "error": { "message": message, "code": code } }))).into_response()
}

#[derive(Deserialize)]
struct ChatBody {
    #[serde(default)]
    model: String,
    #[serde(default)]
    messages: Vec<ChatMessage>,
}

async fn chat_handler(State(shared): State<Shared>, body: Result<Json<ChatBody>, axum::extract::rejection::JsonRejection>) -> Response {
    let _flight = FlightGuard::enter(&shared.inner);
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error_response(400, &e.body_text()),
    };
    let req = describe(body.model, body.messages);
    let latency = {
        let mut g = shared.inner.lock().expect("mock lock");
        g.stats.chat_requests += 1;
        *g.stats.attempts_by_prompt.entry(req.last.clone()).or_default() += 1;
        g.script.latency_ms
    };
    if latency > 0 {
        tokio::time::sleep(Duration::from_millis(latency)).await;
    }
    let reply = shared.responder.as_ref().and_then(|r| r(&req));
    let (reply, id) = {
        let mut g = shared.inner.lock().expect("mock lock");
        g.counter += 1;
        let id = g.counter;
        let reply = reply.or_else(|| pick(&mut g, &req, false)).or_else(|| g.script.default.clone());
        if reply.is_none() {
            g.stats.unmatched += 1;
        }
        (reply, id)
    };
    let Some(reply) = reply else {
        let excerpt: String = req.last.chars().take(200).collect();
        return error_response(422, &format!("no scripted reply matches request: {excerpt}"));
    };
    let message = match reply {
        MockReply::Text { text } => ChatMessage::assistant(Some(text), vec![]),
        MockReply::Json { value } => ChatMessage::assistant(Some(value.to_string()), vec![]),
        MockReply::Echo => ChatMessage::assistant(Some(req.last.clone()), vec![]),
        MockReply::ToolCalls { text, calls } => {
            let calls = calls
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    let args = match c.arguments {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    super::ToolCall::new(format!("call_{id}_{i}"), c.name, args)
                })
                .collect();
            ChatMessage::assistant(text, calls)
        }
        MockReply::Status { code, message } => return error_response(code, &message),
        MockReply::Embedding { .. } => return error_response(500, "embedding reply scripted for chat request"),
    };
    let completion = message.content.as_deref().map_or(0, super::estimate_tokens);
    let prompt = super::estimate_tokens(&req.conversation) + super::estimate_tokens(&req.system);
    Json(json!({
        "id": format!("mockcmpl-{id}"),
        "object": "chat.completion",
        "model": req.model,
        "choices": [{ "index": 0, "message": message, "finish_reason": if message.tool_calls.is_empty() { "stop" } else { "tool_calls" } }],
        "usage": { "prompt_tokens": prompt, "completion_tokens": completion, "total_tokens": prompt + completion }
    }))
    .into_response()
}

#[derive(Deserialize)]
struct EmbedBody {
    #[serde(default)]
    model: String,
    input: EmbedInput,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedInput {
    One(String),
    Many(Vec<String>),
}

/// Bag-of-words hashing embedding: texts sharing tokens get similar vectors.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut v = vec![0.0; dim];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let digest = Sha256::digest(token.to_lowercase().as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % dim;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

async fn embed_handler(State(shared): State<Shared>, body: Result<Json<EmbedBody>, axum::extract::rejection::JsonRejection>) -> Response {
    let _flight = FlightGuard::enter(&shared.inner);
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error_response(400, &e.body_text()),
    };
    let inputs = match body.input {
        EmbedInput::One(s) => vec![s],
        EmbedInput::Many(v) => v,
    };
    let latency = {
        let mut g = shared.inner.lock().expect("mock lock");
        g.stats.embedding_requests += 1;
        g.script.latency_ms
    };
    if latency > 0 {
        tokio::time::sleep(Duration::from_millis(latency)).await;
    }
    let mut data = Vec::with_capacity(inputs.len());
    for (index, text) in inputs.iter().enumerate() {
        let req = describe(body.model.clone(), vec![ChatMessage::user(text)]);
        let mut g = shared.inner.lock().expect("mock lock");
        let vector = match pick(&mut g, &req, true) {
            Some(MockReply::Embedding { vector }) => vector,
            _ => hash_embedding(text, g.script.embedding_dim),
        };
        data.push(json!({ "object": "embedding", "index": index, "embedding": vector }));
    }
    Json(json!({ "object": "list", "model": body.model, "data": data })).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_parses_from_toml() {
        let script = MockScript::from_toml(
            r#"
            latency_ms = 5
            [[entries]]
            match = { system = "meta", turn = 0 }
            reply = { type = "tool_calls", calls = [{ name = "Write", arguments = { file_path = "a", content = "b" } }] }
            [[entries]]
            reply = { type = "text", text = "done" }
            times = 2
            [default]
            type = "echo"
            "#,
        )
        .unwrap();
        assert_eq!(script.entries.len(), 2);
        assert_eq!(script.entries[1].times, Some(2));
        assert_eq!(script.default, Some(MockReply::Echo));
        assert_eq!(script.latency_ms, 5);
    }

    #[test]
    fn hash_embedding_is_deterministic() {
        assert_eq!(hash_embedding("a b c", 16), hash_embedding("a b c", 16));
        assert_ne!(hash_embedding("alpha", 16), hash_embedding("omega", 16));
    }

    #[test]
    fn matcher_conditions() {
        let req = describe(
            "m".into(),
            vec![ChatMessage::system("you are the meta agent"), ChatMessage::user("iteration iter2 begins")],
        );
        assert!(matches(&Matcher::system("meta agent").at_turn(0), None, &req));
        assert!(!matches(&Matcher::system("meta agent").at_turn(1), None, &req));
        assert!(matches(&Matcher::contains("iter2"), None, &req));
        assert!(!matches(&Matcher::contains("iter2").and_excludes("begins"), None, &req));
        let re = Regex::new(r"iter\d").unwrap();
        assert!(matches(&Matcher::any(), Some(&re), &req));
    }
}
