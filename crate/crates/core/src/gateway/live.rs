use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, EmbeddingBackend, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Base URL up to (not including) `/chat/completions`, e.g. `https://host/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub embedding_model: String,
    pub timeout: Duration,
}

impl LiveConfig {
    /// Reads the API key from `key_env`, if set.
    pub fn from_env(base_url: impl Into<String>, key_env: &str, embedding_model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: std::env::var(key_env).ok().filter(|k| !k.is_empty()),
            embedding_model: embedding_model.into(),
            timeout: Duration::from_secs(60),
        }
    }
}

/// HTTP backend speaking the common chat-completions / embeddings JSON shape.
pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = self.client.post(&url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("{status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Unavailable(format!("malformed response payload: {e}")))
    }
}

fn parse_chat_payload(payload: &Value) -> Result<ChatResponse, BackendError> {
    let text = payload
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Unavailable("response has no choices[0].message.content".into()))?;
    let usage = TokenUsage {
        prompt_tokens: payload
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: payload
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(ChatResponse {
        text: text.to_string(),
        usage,
    })
}

fn parse_embedding_payload(payload: &Value) -> Result<Vec<Vec<f64>>, BackendError> {
    let data = payload
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Unavailable("response has no data array".into()))?;
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
    for (i, item) in data.iter().enumerate() {
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Unavailable(format!("data[{i}] has no embedding")))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| BackendError::Unavailable(format!("data[{i}] has a non-numeric entry")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let index = item.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
        rows.push((index, values));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl ChatBackend for LiveBackend {
    fn backend_id(&self) -> String {
        format!("live:{}", self.config.base_url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let payload = self.post("chat/completions", &body)?;
        parse_chat_payload(&payload)
    }
}

impl EmbeddingBackend for LiveBackend {
    fn model_id(&self) -> String {
        self.config.embedding_model.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({"model": self.config.embedding_model, "input": texts});
        let payload = self.post("embeddings", &body)?;
        parse_embedding_payload(&payload)
    }
}
