//! Single choke point for chat-completion and embedding backends.
//!
//! Every language-model call in the pipeline goes through [`Gateway`], which
//! adds retries with exponential backoff, a call budget, bounded in-flight
//! concurrency, an optional response cache and token accounting.

mod live;
mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::stable_hash;

pub use live::{LiveBackend, LiveConfig};
pub use mock::{MockChat, MockEmbedder, MOCK_EMBEDDING_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    /// Sampling seed forwarded to backends that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_tokens: 2048,
            model_id: model_id.into(),
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content hash over every field that can influence a response.
    pub fn fingerprint(&self) -> u64 {
        let mut parts: Vec<Vec<u8>> = vec![
            self.model_id.as_bytes().to_vec(),
            self.temperature.to_bits().to_le_bytes().to_vec(),
            self.max_tokens.to_le_bytes().to_vec(),
            self.seed.map(|s| s.to_le_bytes().to_vec()).unwrap_or_default(),
        ];
        for m in &self.messages {
            parts.push(format!("{:?}", m.role).into_bytes());
            parts.push(m.content.as_bytes().to_vec());
        }
        stable_hash(parts)
    }

    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Self {
        Self {
            values,
            model_id: model_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Rate limits, server errors, timeouts.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// Connection failures and malformed payloads.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// Not worth retrying (authentication, bad request).
    #[error("backend rejected request: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("call budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_chat_calls: Option<u64>,
    pub max_in_flight: usize,
    pub cache: bool,
    pub embed_batch: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            max_chat_calls: None,
            max_in_flight: 8,
            cache: false,
            embed_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub retries: u64,
    pub cache_hits: u64,
    pub usage: TokenUsage,
}

struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(slots: usize) -> Self {
        Self {
            slots: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.slots.lock().unwrap() += 1;
        self.limiter.freed.notify_one();
    }
}

pub struct Gateway {
    chat_backend: Arc<dyn ChatBackend>,
    embed_backend: Arc<dyn EmbeddingBackend>,
    config: GatewayConfig,
    limiter: Limiter,
    stats: Mutex<GatewayStats>,
    cache: Mutex<HashMap<(String, u64), ChatResponse>>,
    dims: Mutex<HashMap<String, usize>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("chat", &self.chat_backend.backend_id())
            .field("embed", &self.embed_backend.model_id())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        chat_backend: Arc<dyn ChatBackend>,
        embed_backend: Arc<dyn EmbeddingBackend>,
        config: GatewayConfig,
    ) -> Self {
        let limiter = Limiter::new(config.max_in_flight);
        Self {
            chat_backend,
            embed_backend,
            config,
            limiter,
            stats: Mutex::new(GatewayStats::default()),
            cache: Mutex::new(HashMap::new()),
            dims: Mutex::new(HashMap::new()),
        }
    }

    /// Offline gateway: template-driven mock chat and hashing embedder.
    pub fn mock(seed: u64) -> Self {
        Self::new(
            Arc::new(MockChat::new(seed)),
            Arc::new(MockEmbedder::new(seed)),
            GatewayConfig {
                backoff_base: Duration::ZERO,
                ..GatewayConfig::default()
            },
        )
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        *self.stats.lock().unwrap()
    }

    pub fn embedding_model(&self) -> String {
        self.embed_backend.model_id()
    }

    fn backoff(&self, attempt: u32) {
        if self.config.backoff_base.is_zero() {
            return;
        }
        let factor = 1u32 << attempt.min(10);
        std::thread::sleep(self.config.backoff_base * factor);
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                self.stats.lock().unwrap().retries += 1;
                self.backoff(attempt - 1);
            }
            match call() {
                Ok(v) => return Ok(v),
                Err(BackendError::Fatal(msg)) => return Err(GatewayError::BackendUnavailable(msg)),
                Err(e) => last = Some(e),
            }
        }
        match last {
            Some(BackendError::Transient(msg)) => Err(GatewayError::RetriesExhausted { attempts, last: msg }),
            Some(BackendError::Unavailable(msg)) | Some(BackendError::Fatal(msg)) => {
                Err(GatewayError::BackendUnavailable(msg))
            }
            None => Err(GatewayError::BackendUnavailable("no attempt made".into())),
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let key = (self.chat_backend.backend_id(), request.fingerprint());
        if self.config.cache {
            if let Some(hit) = self.cache.lock().unwrap().get(&key) {
                self.stats.lock().unwrap().cache_hits += 1;
                return Ok(hit.text.clone());
            }
        }
        {
            let mut stats = self.stats.lock().unwrap();
            if let Some(limit) = self.config.max_chat_calls {
                if stats.chat_calls >= limit {
                    return Err(GatewayError::BudgetExceeded { limit });
                }
            }
            stats.chat_calls += 1;
        }
        let response = {
            let _slot = self.limiter.acquire();
            self.with_retries(|| self.chat_backend.complete(request))?
        };
        {
            let mut stats = self.stats.lock().unwrap();
            stats.usage.prompt_tokens += response.usage.prompt_tokens;
            stats.usage.completion_tokens += response.usage.completion_tokens;
        }
        if self.config.cache {
            self.cache.lock().unwrap().insert(key, response.clone());
        }
        Ok(response.text)
    }

    /// Embeds every text, preserving order. Never returns a partial batch.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let model = self.embed_backend.model_id();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.embed_batch.max(1)) {
            self.stats.lock().unwrap().embed_calls += 1;
            let vectors = {
                let _slot = self.limiter.acquire();
                self.with_retries(|| self.embed_backend.embed(chunk))?
            };
            if vectors.len() != chunk.len() {
                return Err(GatewayError::BackendUnavailable(format!(
                    "backend returned {} vectors for {} inputs",
                    vectors.len(),
                    chunk.len()
                )));
            }
            for values in vectors {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(GatewayError::BackendUnavailable(
                        "backend returned an empty or non-finite embedding".into(),
                    ));
                }
                let mut dims = self.dims.lock().unwrap();
                let expected = *dims.entry(model.clone()).or_insert(values.len());
                if expected != values.len() {
                    return Err(GatewayError::DimensionMismatch {
                        expected,
                        found: values.len(),
                    });
                }
                out.push(EmbeddingVector::new(values, model.clone()));
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self
            .embed_texts(std::slice::from_ref(&text.to_string()))?
            .pop()
            .expect("one vector per input"))
    }
}

/// Chat backend replaying queued replies; the last reply repeats.
///
/// Used to script model behavior in tests and examples.
pub struct ScriptedChat {
    replies: Mutex<Vec<Result<String, BackendError>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(replies: Vec<Result<String, BackendError>>) -> Self {
        let mut replies = replies;
        replies.reverse();
        Self {
            replies: Mutex::new(replies),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn texts(replies: &[&str]) -> Self {
        Self::new(replies.iter().map(|r| Ok(r.to_string())).collect())
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn backend_id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        let mut replies = self.replies.lock().unwrap();
        let reply = if replies.len() > 1 {
            replies.pop().unwrap()
        } else {
            replies
                .last()
                .cloned()
                .unwrap_or_else(|| Err(BackendError::Unavailable("script exhausted".into())))
        };
        reply.map(|text| ChatResponse {
            usage: TokenUsage {
                prompt_tokens: (request.prompt_chars() / 4) as u64,
                completion_tokens: (text.len() / 4) as u64,
            },
            text,
        })
    }
}

/// Embedding backend returning fixed vectors per text (unknown texts fail).
pub struct FixedEmbedder {
    model: String,
    table: HashMap<String, Vec<f64>>,
}

impl FixedEmbedder {
    pub fn new(table: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        Self {
            model: "fixed".into(),
            table: table.into_iter().collect(),
        }
    }
}

impl EmbeddingBackend for FixedEmbedder {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| BackendError::Fatal(format!("no fixed embedding for {t:?}")))
            })
            .collect()
    }
}
