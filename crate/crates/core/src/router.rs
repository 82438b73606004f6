//! The router contract and its implementations: embedding routers over the
//! query alone or query plus history, a prompted language-model router, a
//! label oracle and a uniform random baseline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::graph::cosine;
use crate::registry::{serialize_phi, CandidatePool};
use crate::supervision::{render_prompt, render_transcript};
use crate::trajectory::Turn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    pub chosen: Option<String>,
    /// Candidates with scores, best first. Empty for routers without scores.
    pub ranking: Vec<(String, f64)>,
    pub rationale: Option<String>,
    pub abstained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl RouterDecision {
    pub fn chose(name: impl Into<String>, ranking: Vec<(String, f64)>, rationale: Option<String>) -> Self {
        Self {
            chosen: Some(name.into()),
            ranking,
            rationale,
            abstained: false,
            reason: None,
        }
    }

    pub fn abstain(reason: impl Into<String>, rationale: Option<String>) -> Self {
        Self {
            chosen: None,
            ranking: Vec::new(),
            rationale,
            abstained: true,
            reason: Some(reason.into()),
        }
    }

    pub fn is_correct(&self, label: &str) -> bool {
        self.chosen.as_deref() == Some(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterVariant {
    EmbeddingQ,
    EmbeddingQh,
    Llm,
    Oracle,
    Random,
}

impl RouterVariant {
    pub const ALL: [RouterVariant; 5] = [
        RouterVariant::EmbeddingQ,
        RouterVariant::EmbeddingQh,
        RouterVariant::Llm,
        RouterVariant::Oracle,
        RouterVariant::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RouterVariant::EmbeddingQ => "embedding_q",
            RouterVariant::EmbeddingQh => "embedding_qh",
            RouterVariant::Llm => "llm",
            RouterVariant::Oracle => "oracle",
            RouterVariant::Random => "random",
        }
    }
}

impl fmt::Display for RouterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouterVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown router variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub variant: RouterVariant,
    /// Chat model for the `llm` variant; any served fine-tuned router fits here.
    pub model_id: String,
    pub temperature: f64,
    /// Character budget for the embedded request text.
    pub max_input_chars: usize,
    #[serde(with = "duration_secs")]
    pub timeout: Option<Duration>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            variant: RouterVariant::Oracle,
            model_id: "mock".into(),
            temperature: 1.0,
            max_input_chars: 8192,
            timeout: Some(Duration::from_secs(120)),
        }
    }
}

impl RouterConfig {
    pub fn new(variant: RouterVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?
            .filter(|s| s.is_finite() && *s > 0.0)
            .map(Duration::from_secs_f64))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RouteRequest<'a> {
    pub query: &'a str,
    pub history: &'a [Turn],
    pub pool: &'a CandidatePool,
    /// Ground truth, visible only to the oracle.
    pub label: Option<&'a str>,
    pub seed: u64,
}

pub trait Router: Send + Sync {
    fn name(&self) -> String;
    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision;
}

/// Picks the highest score; ties go to the lexicographically smallest name.
/// Returns the ranking sorted best first.
pub fn argmax(scores: Vec<(String, f64)>) -> Option<(String, Vec<(String, f64)>)> {
    let mut ranking = scores;
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let best = ranking.first()?.0.clone();
    Some((best, ranking))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    Query,
    QueryHistory,
}

type NamedVector = (String, Arc<Vec<f64>>);

pub type ScoreTransform = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub struct EmbeddingRouter {
    gateway: Arc<Gateway>,
    mode: EmbeddingMode,
    max_input_chars: usize,
    transform: Option<ScoreTransform>,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl EmbeddingRouter {
    pub fn new(gateway: Arc<Gateway>, mode: EmbeddingMode, max_input_chars: usize) -> Self {
        Self {
            gateway,
            mode,
            max_input_chars: max_input_chars.max(1),
            transform: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Applies `f` to every score before selection.
    pub fn with_score_transform(mut self, f: ScoreTransform) -> Self {
        self.transform = Some(f);
        self
    }

    /// Request text: the query, or the rendered history then the query,
    /// dropping the oldest exchanges until it fits the character budget.
    pub fn request_text(&self, request: &RouteRequest<'_>) -> String {
        match self.mode {
            EmbeddingMode::Query => tail_chars(request.query, self.max_input_chars),
            EmbeddingMode::QueryHistory => {
                let kind = request.pool.kind();
                let history = request.history;
                let starts = (0..history.len())
                    .filter(|&i| history[i].is_observation())
                    .chain(std::iter::once(history.len()));
                for start in starts {
                    let rendered = render_transcript(&history[start..], kind);
                    let text = if rendered.is_empty() {
                        request.query.to_string()
                    } else {
                        format!("{rendered}\n{}", request.query)
                    };
                    if text.chars().count() <= self.max_input_chars {
                        return text;
                    }
                }
                tail_chars(request.query, self.max_input_chars)
            }
        }
    }

    fn candidate_vectors(&self, pool: &CandidatePool) -> Result<Vec<NamedVector>, String> {
        let texts: Vec<(String, String)> = pool.specs().map(|s| (s.name().to_string(), serialize_phi(s))).collect();
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::BTreeSet::new();
            texts
                .iter()
                .filter(|(_, t)| !cache.contains_key(t) && seen.insert(t.clone()))
                .map(|(_, t)| t.clone())
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.gateway.embed_texts(&missing).map_err(|e| e.to_string())?;
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in missing.into_iter().zip(vectors) {
                cache.insert(t, Arc::new(v.values));
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.into_iter().map(|(n, t)| (n, cache[&t].clone())).collect())
    }
}

fn tail_chars(text: &str, max: usize) -> String {
    let count = text.chars().count();
    text.chars().skip(count.saturating_sub(max)).collect()
}

impl Router for EmbeddingRouter {
    fn name(&self) -> String {
        match self.mode {
            EmbeddingMode::Query => "embedding_q".into(),
            EmbeddingMode::QueryHistory => "embedding_qh".into(),
        }
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        let text = self.request_text(request);
        let query = match self.gateway.embed_one(&text) {
            Ok(v) => v,
            Err(e) => return RouterDecision::abstain(e.to_string(), None),
        };
        let candidates = match self.candidate_vectors(request.pool) {
            Ok(c) => c,
            Err(e) => return RouterDecision::abstain(e, None),
        };
        let mut scores = Vec::with_capacity(candidates.len());
        for (name, vector) in candidates {
            let score = match cosine(&query.values, &vector) {
                Ok(s) => s,
                Err(e) => return RouterDecision::abstain(e.to_string(), None),
            };
            let score = match &self.transform {
                Some(f) => f(score),
                None => score,
            };
            scores.push((name, score));
        }
        match argmax(scores) {
            Some((best, ranking)) => RouterDecision::chose(best, ranking, None),
            None => RouterDecision::abstain("empty pool", None),
        }
    }
}

/// Strips one `<think>…</think>` block, then takes the last top-level JSON
/// array in the text, which must hold exactly one string naming a pool
/// member. Never panics.
pub fn parse_decision(text: &str, pool: &CandidatePool) -> Result<String, String> {
    let stripped: String = match (text.find("<think>"), text.find("</think>")) {
        (Some(open), Some(close)) if close > open => {
            format!("{}{}", &text[..open], &text[close + "</think>".len()..])
        }
        _ => text.to_string(),
    };
    let mut arrays: Vec<(usize, usize, Vec<Value>)> = Vec::new();
    for (start, _) in stripped.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&stripped[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            arrays.push((start, start + stream.byte_offset(), items));
        }
    }
    let top_level = arrays
        .iter()
        .filter(|(s, e, _)| !arrays.iter().any(|(os, oe, _)| os < s && e <= oe))
        .max_by_key(|(s, _, _)| *s);
    let Some((_, _, items)) = top_level else {
        return Err("no JSON array in reply".into());
    };
    let names: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
    if names.len() != items.len() {
        return Err("array holds non-string entries".into());
    }
    match names.as_slice() {
        [name] if pool.contains(name) => Ok((*name).to_string()),
        [name] => Err(format!("`{name}` is not in the pool")),
        _ => Err(format!("expected exactly one name, got {}", names.len())),
    }
}

pub struct LlmRouter {
    gateway: Arc<Gateway>,
    model_id: String,
    temperature: f64,
}

impl LlmRouter {
    pub fn new(gateway: Arc<Gateway>, model_id: impl Into<String>, temperature: f64) -> Self {
        Self {
            gateway,
            model_id: model_id.into(),
            temperature,
        }
    }
}

impl Router for LlmRouter {
    fn name(&self) -> String {
        format!("llm:{}", self.model_id)
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        let (system, user) = match render_prompt(request.query, request.history, request.pool) {
            Ok(p) => p,
            Err(e) => return RouterDecision::abstain(e.to_string(), None),
        };
        let chat = ChatRequest::new(
            &self.model_id,
            vec![ChatMessage::system(system), ChatMessage::user(user)],
        )
        .with_temperature(self.temperature)
        .with_seed(request.seed);
        let reply = match self.gateway.chat(&chat) {
            Ok(r) => r,
            Err(e) => return RouterDecision::abstain(e.to_string(), None),
        };
        match parse_decision(&reply, request.pool) {
            Ok(name) => RouterDecision::chose(name.clone(), vec![(name, 1.0)], Some(reply)),
            Err(reason) => RouterDecision::abstain(reason, Some(reply)),
        }
    }
}

/// Returns the ground-truth label, from the request or a query table.
#[derive(Debug, Clone, Default)]
pub struct OracleRouter {
    table: HashMap<String, String>,
}

impl OracleRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_table(table: HashMap<String, String>) -> Self {
        Self { table }
    }
}

impl Router for OracleRouter {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        let label = request
            .label
            .or_else(|| self.table.get(request.query).map(String::as_str));
        match label {
            Some(l) if request.pool.contains(l) => RouterDecision::chose(l, vec![(l.to_string(), 1.0)], None),
            Some(l) => RouterDecision::abstain(format!("label `{l}` is not in the pool"), None),
            None => RouterDecision::abstain("no label available", None),
        }
    }
}

/// Uniform choice over the pool, seeded by the request.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomRouter;

impl Router for RandomRouter {
    fn name(&self) -> String {
        "random".into()
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        let members = request.pool.members();
        if members.is_empty() {
            return RouterDecision::abstain("empty pool", None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        RouterDecision::chose(members[rng.random_range(0..members.len())].clone(), Vec::new(), None)
    }
}

/// Abstains when the inner router does not answer within `timeout`.
pub struct TimedRouter {
    inner: Arc<dyn Router>,
    timeout: Duration,
}

impl TimedRouter {
    pub fn new(inner: Arc<dyn Router>, timeout: Duration) -> Self {
        Self { inner, timeout }
    }
}

impl Router for TimedRouter {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        let (tx, rx) = mpsc::channel();
        let inner = self.inner.clone();
        let query = request.query.to_string();
        let history = request.history.to_vec();
        let pool = request.pool.clone();
        let label = request.label.map(str::to_string);
        let seed = request.seed;
        std::thread::spawn(move || {
            let decision = inner.route(&RouteRequest {
                query: &query,
                history: &history,
                pool: &pool,
                label: label.as_deref(),
                seed,
            });
            let _ = tx.send(decision);
        });
        rx.recv_timeout(self.timeout)
            .unwrap_or_else(|_| RouterDecision::abstain(format!("no decision within {:?}", self.timeout), None))
    }
}

pub fn build_router(config: &RouterConfig, gateway: Arc<Gateway>) -> Box<dyn Router> {
    let inner: Arc<dyn Router> = match config.variant {
        RouterVariant::Oracle => return Box::new(OracleRouter::new()),
        RouterVariant::Random => return Box::new(RandomRouter),
        RouterVariant::EmbeddingQ => Arc::new(EmbeddingRouter::new(
            gateway,
            EmbeddingMode::Query,
            config.max_input_chars,
        )),
        RouterVariant::EmbeddingQh => Arc::new(EmbeddingRouter::new(
            gateway,
            EmbeddingMode::QueryHistory,
            config.max_input_chars,
        )),
        RouterVariant::Llm => Arc::new(LlmRouter::new(gateway, &config.model_id, config.temperature)),
    };
    match config.timeout {
        Some(t) => Box::new(TimedRouter::new(inner, t)),
        None => Box::new(SharedRouter(inner)),
    }
}

struct SharedRouter(Arc<dyn Router>);

impl Router for SharedRouter {
    fn name(&self) -> String {
        self.0.name()
    }

    fn route(&self, request: &RouteRequest<'_>) -> RouterDecision {
        self.0.route(request)
    }
}

/// Convenience dispatch for a single decision.
pub fn route(config: &RouterConfig, gateway: Arc<Gateway>, request: &RouteRequest<'_>) -> RouterDecision {
    build_router(config, gateway).route(request)
}
