//! Single access point to chat-completion and embedding endpoints.
//!
//! Every call goes through a per-gateway admission semaphore, so the
//! concurrency cap holds across all callers sharing the gateway. Each item
//! is attempted at most three times; structured-output responses that fail
//! schema validation count as failed attempts.

mod mock;
mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

pub use mock::{
    hash_embedding, mock_model, Matcher, MockError, MockReply, MockRequest, MockScript, MockServer, MockStats, MockToolCall,
    Responder, ScriptEntry,
};
pub use wire::{ChatMessage, FunctionCall, Role, ToolCall, ToolDefinition};

pub const ENV_API_KEY: &str = "OPENROUTER_API_KEY";
pub const ENV_API_BASE: &str = "OPENROUTER_API_BASE";
pub const ENV_SANDBOX_MODEL: &str = "SANDBOX_MODEL";
pub const ENV_EMBEDDING_MODEL: &str = "EMBEDDING_MODEL";

pub const MAX_CONCURRENCY: usize = 50;
pub const MAX_BATCH: usize = 100;
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("Number of prompts ({requested}) exceeds maximum allowed per batch ({max})")]
    BatchLimit { requested: usize, max: usize },
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("structured output failed schema validation: {0}")]
    Schema(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<GatewayError> },
    #[error("input must be non-empty")]
    EmptyInput,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_)
            | GatewayError::Timeout(_)
            | GatewayError::Malformed(_)
            | GatewayError::Schema(_) => true,
            GatewayError::Status { status, .. } => *status >= 500 || *status == 429 || *status == 408,
            _ => false,
        }
    }
}

/// One model behind an OpenAI-compatible base URL.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
}

impl fmt::Debug for ModelEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelEndpoint")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model_id", &self.model_id)
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), api_key: None, model_id: model_id.into(), temperature: 0.0 }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Endpoint configured from `OPENROUTER_API_BASE` / `OPENROUTER_API_KEY`.
    pub fn from_env(model_id: impl Into<String>) -> Result<Self, GatewayError> {
        let base = std::env::var(ENV_API_BASE).map_err(|_| GatewayError::MissingEnv(ENV_API_BASE))?;
        let key = std::env::var(ENV_API_KEY).map_err(|_| GatewayError::MissingEnv(ENV_API_KEY))?;
        Ok(Self::new(base, model_id).with_api_key(key))
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    /// JSON schema the response must satisfy; plain text when `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Value>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    MAX_ATTEMPTS
}

impl ChatRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), schema: None, max_retries: MAX_ATTEMPTS }
    }

    pub fn structured(prompt: impl Into<String>, schema: Value) -> Self {
        Self { prompt: prompt.into(), schema: Some(schema), max_retries: MAX_ATTEMPTS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatOutput {
    Text(String),
    Structured(Value),
}

impl ChatOutput {
    pub fn as_text(&self) -> String {
        match self {
            ChatOutput::Text(t) => t.clone(),
            ChatOutput::Structured(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub failures: u64,
}

impl ModelUsage {
    fn absorb(&mut self, other: &ModelUsage) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.failures += other.failures;
    }
}

/// Per-model request and token counters. Counts only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub models: BTreeMap<String, ModelUsage>,
}

impl UsageLedger {
    pub fn totals(&self) -> ModelUsage {
        let mut total = ModelUsage::default();
        for usage in self.models.values() {
            total.absorb(usage);
        }
        total
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (model, usage) in &other.models {
            self.models.entry(model.clone()).or_default().absorb(usage);
        }
    }
}

pub type SharedLedger = Arc<Mutex<UsageLedger>>;

/// Token estimate used when the response carries no usage block.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub max_concurrency: usize,
    pub max_batch: usize,
    pub max_attempts: u32,
    #[serde(with = "secs")]
    pub chat_timeout: Duration,
    #[serde(with = "secs")]
    pub embed_timeout: Duration,
    #[serde(with = "secs")]
    pub retry_backoff: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_concurrency: MAX_CONCURRENCY,
            max_batch: MAX_BATCH,
            max_attempts: MAX_ATTEMPTS,
            chat_timeout: Duration::from_secs(120),
            embed_timeout: Duration::from_secs(30),
            retry_backoff: Duration::from_millis(500),
        }
    }
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

pub struct Gateway {
    endpoint: ModelEndpoint,
    http: reqwest::Client,
    admission: Arc<Semaphore>,
    ledger: SharedLedger,
    config: GatewayConfig,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("endpoint", &self.endpoint).field("config", &self.config).finish()
    }
}

impl Gateway {
    pub fn new(endpoint: ModelEndpoint, config: GatewayConfig) -> Self {
        let http = reqwest::Client::builder().build().expect("reqwest client");
        Self {
            admission: Arc::new(Semaphore::new(config.max_concurrency.max(1))),
            endpoint,
            http,
            ledger: SharedLedger::default(),
            config,
        }
    }

    /// Shares a usage ledger with other gateways.
    pub fn with_ledger(mut self, ledger: SharedLedger) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn ledger(&self) -> SharedLedger {
        self.ledger.clone()
    }

    pub fn usage(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    fn record(&self, prompt_tokens: u64, completion_tokens: u64, failed: bool) {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let entry = ledger.models.entry(self.endpoint.model_id.clone()).or_default();
        entry.requests += 1;
        entry.prompt_tokens += prompt_tokens;
        entry.completion_tokens += completion_tokens;
        if failed {
            entry.failures += 1;
        }
    }

    async fn post_json(&self, path: &str, body: &Value, timeout: Duration) -> Result<Value, GatewayError> {
        let _permit = self.admission.acquire().await.expect("admission semaphore closed");
        let mut req = self.http.post(self.endpoint.url(path)).json(body).timeout(timeout);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout(timeout)
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Status { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(e.to_string()))
    }

    async fn with_retries<T, F, Fut>(&self, attempts: u32, mut op: F) -> Result<T, GatewayError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, GatewayError>>,
    {
        let attempts = attempts.clamp(1, self.config.max_attempts.max(1));
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 && !self.config.retry_backoff.is_zero() {
                tokio::time::sleep(self.config.retry_backoff * 2u32.pow(attempt - 1)).await;
            }
            match op().await {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() => {
                    tracing::debug!(attempt, error = %e, "gateway attempt failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(GatewayError::Exhausted { attempts, last: Box::new(last.expect("at least one attempt")) })
    }

    async fn chat_once(&self, messages: &[ChatMessage], tools: &[ToolDefinition], schema: Option<&Value>) -> Result<ChatMessage, GatewayError> {
        let body = wire::chat_body(&self.endpoint, messages, tools, schema);
        let prompt_chars: String = messages.iter().filter_map(|m| m.content.as_deref()).collect();
        match self.post_json("chat/completions", &body, self.config.chat_timeout).await {
            Ok(value) => {
                let parsed = wire::parse_chat_response(value);
                match &parsed {
                    Ok((msg, usage)) => {
                        let (p, c) = usage.unwrap_or_else(|| {
                            (estimate_tokens(&prompt_chars), estimate_tokens(msg.content.as_deref().unwrap_or("")))
                        });
                        self.record(p, c, false);
                    }
                    Err(_) => self.record(estimate_tokens(&prompt_chars), 0, true),
                }
                parsed.map(|(msg, _)| msg)
            }
            Err(e) => {
                self.record(estimate_tokens(&prompt_chars), 0, true);
                Err(e)
            }
        }
    }

    /// One prompt, with retries and optional schema enforcement.
    pub async fn chat(&self, request: &ChatRequest) -> Result<ChatOutput, GatewayError> {
        let validator = match &request.schema {
            Some(schema) => Some(jsonschema::validator_for(schema).map_err(|e| GatewayError::InvalidSchema(e.to_string()))?),
            None => None,
        };
        let messages = [ChatMessage::user(&request.prompt)];
        self.with_retries(request.max_retries, || async {
            let msg = self.chat_once(&messages, &[], request.schema.as_ref()).await?;
            let text = msg.content.unwrap_or_default();
            match &validator {
                None => Ok(ChatOutput::Text(text)),
                Some(v) => {
                    let value = extract_json(&text).ok_or_else(|| GatewayError::Schema("response is not JSON".into()))?;
                    if let Some(err) = v.iter_errors(&value).next() {
                        return Err(GatewayError::Schema(err.to_string()));
                    }
                    Ok(ChatOutput::Structured(value))
                }
            }
        })
        .await
    }

    /// Positionally aligned results for up to `max_batch` requests.
    pub async fn chat_batch(&self, requests: &[ChatRequest]) -> Result<Vec<Result<ChatOutput, GatewayError>>, GatewayError> {
        self.chat_batch_with(requests, self.config.max_concurrency).await
    }

    /// Like [`Gateway::chat_batch`] with an extra per-batch concurrency cap;
    /// the gateway-wide cap still applies.
    pub async fn chat_batch_with(
        &self,
        requests: &[ChatRequest],
        max_concurrency: usize,
    ) -> Result<Vec<Result<ChatOutput, GatewayError>>, GatewayError> {
        if requests.len() > self.config.max_batch {
            return Err(GatewayError::BatchLimit { requested: requests.len(), max: self.config.max_batch });
        }
        let local = Semaphore::new(max_concurrency.max(1));
        let futures = requests.iter().map(|req| async {
            let _permit = local.acquire().await.expect("batch semaphore closed");
            self.chat(req).await
        });
        Ok(join_all(futures).await)
    }

    /// One agent turn: the full conversation plus tool definitions in, the
    /// assistant message (possibly carrying tool calls) out.
    pub async fn complete(&self, messages: &[ChatMessage], tools: &[ToolDefinition]) -> Result<ChatMessage, GatewayError> {
        self.with_retries(MAX_ATTEMPTS, || self.chat_once(messages, tools, None)).await
    }

    /// Embeds `texts` and L2-normalizes every row.
    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
            return Err(GatewayError::EmptyInput);
        }
        let mut rows = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.max_batch.max(1)) {
            let body = serde_json::json!({ "model": self.endpoint.model_id, "input": chunk });
            let chars: String = chunk.concat();
            let value = self
                .with_retries(MAX_ATTEMPTS, || async {
                    let r = self.post_json("embeddings", &body, self.config.embed_timeout).await;
                    self.record(estimate_tokens(&chars), 0, r.is_err());
                    let value = r?;
                    wire::parse_embeddings(value, chunk.len())
                })
                .await?;
            rows.extend(value);
        }
        Ok(rows.into_iter().map(normalize).collect())
    }
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Row-by-row dot products of two row-normalized matrices.
pub fn cosine_similarity(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GatewayError> {
    let dim = a.first().or(b.first()).map_or(0, Vec::len);
    for row in a.iter().chain(b) {
        if row.len() != dim {
            return Err(GatewayError::DimensionMismatch(dim, row.len()));
        }
    }
    Ok(a.iter()
        .map(|ra| b.iter().map(|rb| ra.iter().zip(rb).map(|(x, y)| x * y).sum()).collect())
        .collect())
}

/// Finds a JSON value in model text: the whole text, a fenced block, or the
/// outermost `{...}` span.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let unfenced = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"));
    if let Some(inner) = unfenced {
        if let Ok(v) = serde_json::from_str(inner.trim()) {
            return Some(v);
        }
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    serde_json::from_str(trimmed.get(start..=end)?).ok()
}
