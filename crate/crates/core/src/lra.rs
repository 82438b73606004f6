//! The two-tool agent loop: a reasoner that can only ask the router for a
//! candidate and execute the candidate it was given. The catalog never
//! enters the reasoner's prompt.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::prompts::{self, EXECUTE_TOOL, ROUTE_TOOL, TOOL_RESULT_LABEL};
use crate::registry::CandidatePool;
use crate::router::{RouteRequest, Router, RouterDecision};
use crate::trajectory::{CandidateCall, Turn};
use crate::util::{derive_seed, stable_hash, strip_code_fence};

#[derive(Debug, Error)]
pub enum LraError {
    #[error("step budget must be at least 1")]
    BadBudget,
    #[error("no executor is bound for pool member `{0}`")]
    Uncovered(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Produces the next reasoner reply for a conversation.
pub trait Reasoner: Send + Sync {
    fn reply(&self, messages: &[ChatMessage], seed: u64) -> Result<String, GatewayError>;
}

pub struct LlmReasoner<'a> {
    gateway: &'a Gateway,
    model_id: String,
    temperature: f64,
}

impl<'a> LlmReasoner<'a> {
    pub fn new(gateway: &'a Gateway, model_id: impl Into<String>, temperature: f64) -> Self {
        Self {
            gateway,
            model_id: model_id.into(),
            temperature,
        }
    }
}

impl Reasoner for LlmReasoner<'_> {
    fn reply(&self, messages: &[ChatMessage], seed: u64) -> Result<String, GatewayError> {
        let request = ChatRequest::new(&self.model_id, messages.to_vec())
            .with_temperature(self.temperature)
            .with_seed(seed);
        self.gateway.chat(&request)
    }
}

/// Replays fixed replies, indexed by how many replies the conversation
/// already holds. Past the end it gives a final answer.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReasoner {
    replies: Vec<String>,
}

impl ScriptedReasoner {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
        }
    }

    pub fn route(need: &str) -> String {
        json!({"thought": "route", "tool": ROUTE_TOOL, "arguments": {"need": need}}).to_string()
    }

    pub fn execute(arguments: Value) -> String {
        json!({"thought": "execute", "tool": EXECUTE_TOOL, "arguments": {"arguments": arguments}}).to_string()
    }

    pub fn answer(text: &str) -> String {
        json!({"thought": "done", "answer": text}).to_string()
    }
}

impl Reasoner for ScriptedReasoner {
    fn reply(&self, messages: &[ChatMessage], _seed: u64) -> Result<String, GatewayError> {
        let index = messages
            .iter()
            .filter(|m| m.role == crate::gateway::Role::Assistant)
            .count();
        Ok(self
            .replies
            .get(index)
            .cloned()
            .unwrap_or_else(|| Self::answer("script finished")))
    }
}

/// Canonical JSON text with object keys sorted, for argument hashing.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, Value> = map.iter().map(|(k, v)| (k, sort(v))).collect();
                Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect::<Map<_, _>>())
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

pub fn argument_hash(arguments: &Value) -> u64 {
    stable_hash([canonical_json(arguments)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedResult {
    Output(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExecutorEndpoint {
    /// Validates arguments against the schema and returns a fixed success payload.
    Mock,
    /// Results keyed by argument hash, with an optional fallback.
    Scripted {
        #[serde(default)]
        by_arguments: BTreeMap<u64, ScriptedResult>,
        #[serde(default)]
        fallback: Option<ScriptedResult>,
    },
    /// Runs a program with the arguments JSON on stdin; stdout is the result.
    Command { program: String, args: Vec<String> },
    /// POSTs `{"candidate","arguments"}` and returns the response body.
    Http { url: String },
}

/// Maps candidate names to execution endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutorBinding {
    #[serde(default)]
    pub endpoints: BTreeMap<String, ExecutorEndpoint>,
    #[serde(default)]
    pub default: Option<ExecutorEndpoint>,
}

impl ExecutorBinding {
    pub fn uniform(endpoint: ExecutorEndpoint) -> Self {
        Self {
            endpoints: BTreeMap::new(),
            default: Some(endpoint),
        }
    }

    pub fn bind(mut self, name: impl Into<String>, endpoint: ExecutorEndpoint) -> Self {
        self.endpoints.insert(name.into(), endpoint);
        self
    }

    pub fn endpoint(&self, name: &str) -> Option<&ExecutorEndpoint> {
        self.endpoints.get(name).or(self.default.as_ref())
    }

    pub fn covers(&self, pool: &CandidatePool) -> Result<(), LraError> {
        match pool.members().iter().find(|m| self.endpoint(m).is_none()) {
            Some(m) => Err(LraError::Uncovered(m.clone())),
            None => Ok(()),
        }
    }

    /// Runs `name` with `arguments`; refuses non-callable pool members.
    pub fn execute(&self, pool: &CandidatePool, name: &str, arguments: &Value) -> Result<String, String> {
        if !pool.contains(name) {
            return Err(format!("`{name}` is not in the pool"));
        }
        if !pool.is_callable(name) {
            return Err(format!("`{name}` is not callable"));
        }
        let endpoint = self
            .endpoint(name)
            .ok_or_else(|| format!("no executor bound for `{name}`"))?;
        match endpoint {
            ExecutorEndpoint::Mock => {
                let spec = pool.spec(name).ok_or_else(|| format!("`{name}` is not in the pool"))?;
                spec.input_schema().check_arguments(arguments)?;
                Ok(json!({"status": "ok", "candidate": name, "result": format!("{name} completed")}).to_string())
            }
            ExecutorEndpoint::Scripted { by_arguments, fallback } => {
                match by_arguments.get(&argument_hash(arguments)).or(fallback.as_ref()) {
                    Some(ScriptedResult::Output(o)) => Ok(o.clone()),
                    Some(ScriptedResult::Error(e)) => Err(e.clone()),
                    None => Err(format!("no scripted result for `{name}` with these arguments")),
                }
            }
            ExecutorEndpoint::Command { program, args } => run_command(program, args, name, arguments),
            ExecutorEndpoint::Http { url } => post_http(url, name, arguments),
        }
    }
}

fn run_command(program: &str, args: &[String], name: &str, arguments: &Value) -> Result<String, String> {
    let mut child = Command::new(program)
        .args(args)
        .env("CANDIDATE_NAME", name)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("failed to start `{program}`: {e}"))?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin
            .write_all(arguments.to_string().as_bytes())
            .map_err(|e| format!("failed to write arguments: {e}"))?;
    }
    let output = child
        .wait_with_output()
        .map_err(|e| format!("`{program}` failed: {e}"))?;
    if output.status.success() {
        Ok(String::from_utf8_lossy(&output.stdout).trim().to_string())
    } else {
        Err(format!(
            "`{program}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ))
    }
}

fn post_http(url: &str, name: &str, arguments: &Value) -> Result<String, String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| e.to_string())?;
    let response = client
        .post(url)
        .json(&json!({"candidate": name, "arguments": arguments}))
        .send()
        .map_err(|e| format!("request to {url} failed: {e}"))?;
    let status = response.status();
    let body = response.text().map_err(|e| e.to_string())?;
    if status.is_success() {
        Ok(body)
    } else {
        Err(format!("{url} returned {status}: {body}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub reasoner_text: String,
    pub candidate: String,
    pub arguments: Value,
    pub output: Option<String>,
    pub error: Option<String>,
}

/// One router decision and every execution made under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub reasoner_text: String,
    pub query: String,
    pub decision: RouterDecision,
    pub executions: Vec<ExecutionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TurnEvent {
    Routed { step: usize },
    Executed { step: usize },
    ExecuteBeforeRoute,
    Invalid { reason: String },
    Answered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerTurn {
    pub prompt_chars: usize,
    pub reply: String,
    #[serde(flatten)]
    pub event: TurnEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Finished { answer: String },
    BudgetExhausted,
    Error { message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAudit {
    pub reasoner_calls: usize,
    pub system_prompt_chars: usize,
    pub max_prompt_chars: usize,
    /// Tool specifications in the largest reasoner prompt.
    pub tool_spec_count: usize,
    /// Pool members whose profile text appeared in any reasoner prompt.
    pub catalog_entries_in_prompt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub task: String,
    pub steps: Vec<EpisodeStep>,
    pub turns: Vec<ReasonerTurn>,
    pub outcome: EpisodeOutcome,
    pub context_audit: ContextAudit,
}

impl EpisodeLog {
    pub fn is_finished(&self) -> bool {
        matches!(self.outcome, EpisodeOutcome::Finished { .. })
    }

    pub fn execute_before_route_count(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.event == TurnEvent::ExecuteBeforeRoute)
            .count()
    }

    /// Every execution names the candidate chosen by the decision it follows.
    pub fn check_legality(&self) -> Result<(), String> {
        for (i, step) in self.steps.iter().enumerate() {
            for exec in &step.executions {
                if step.decision.chosen.as_deref() != Some(exec.candidate.as_str()) {
                    return Err(format!(
                        "step {i} executed `{}` but the router chose {:?}",
                        exec.candidate, step.decision.chosen
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    /// Maximum reasoner turns.
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_steps: 16, seed: 0 }
    }
}

/// Counts the tool specifications listed in a reasoner system prompt.
pub fn count_tool_specs(system_prompt: &str) -> usize {
    prompts::between(system_prompt, "<tools>", "</tools>")
        .and_then(|block| serde_json::from_str::<Vec<Value>>(block.trim()).ok())
        .map_or(0, |specs| specs.len())
}

fn catalog_entries(prompt: &str, pool: &CandidatePool) -> usize {
    pool.specs()
        .filter(|s| !s.description().trim().is_empty() && prompt.contains(s.description()))
        .count()
}

enum Parsed {
    Route(String),
    Execute(Value),
    Answer(String),
    Invalid(String),
}

fn parse_reply(reply: &str) -> Parsed {
    let Ok(value) = serde_json::from_str::<Value>(strip_code_fence(reply).trim()) else {
        return Parsed::Answer(reply.trim().to_string());
    };
    if let Some(answer) = value.get("answer") {
        return Parsed::Answer(answer.as_str().map_or_else(|| answer.to_string(), str::to_string));
    }
    let arguments = value.get("arguments");
    match value.get("tool").and_then(Value::as_str) {
        Some(ROUTE_TOOL) => match arguments.and_then(|a| a.get("need")).and_then(Value::as_str) {
            Some(need) => Parsed::Route(need.to_string()),
            None => Parsed::Invalid(format!("{ROUTE_TOOL} needs a string `need` argument")),
        },
        Some(EXECUTE_TOOL) => match arguments.and_then(|a| a.get("arguments")) {
            Some(args) if args.is_object() => Parsed::Execute(args.clone()),
            _ => Parsed::Invalid(format!("{EXECUTE_TOOL} needs an object `arguments` argument")),
        },
        Some(other) => Parsed::Invalid(format!("unknown tool `{other}`")),
        None if value.is_object() => Parsed::Invalid("reply names no tool and gives no answer".into()),
        None => Parsed::Answer(reply.trim().to_string()),
    }
}

fn history_turns(task: &str, steps: &[EpisodeStep]) -> Vec<Turn> {
    let mut turns = vec![Turn::observation(task)];
    for step in steps {
        for exec in &step.executions {
            let result = exec.output.clone().or_else(|| exec.error.clone()).unwrap_or_default();
            let mut call = CandidateCall::new(&exec.candidate, exec.arguments.clone(), result);
            call.failed = exec.error.is_some();
            turns.push(Turn::action(&exec.reasoner_text, vec![call], None));
        }
    }
    turns
}

fn tool_result(value: Value) -> ChatMessage {
    ChatMessage::user(format!("{TOOL_RESULT_LABEL}{value}"))
}

pub fn run_episode(
    task: &str,
    pool: &CandidatePool,
    router: &dyn Router,
    executor: &ExecutorBinding,
    reasoner: &dyn Reasoner,
    config: &EpisodeConfig,
) -> Result<EpisodeLog, LraError> {
    if config.max_steps == 0 {
        return Err(LraError::BadBudget);
    }
    executor.covers(pool)?;
    let system = prompts::reasoner_system_prompt();
    let mut messages = vec![ChatMessage::system(system.clone()), ChatMessage::user(task)];
    let mut log = EpisodeLog {
        task: task.to_string(),
        steps: Vec::new(),
        turns: Vec::new(),
        outcome: EpisodeOutcome::BudgetExhausted,
        context_audit: ContextAudit {
            system_prompt_chars: system.chars().count(),
            tool_spec_count: count_tool_specs(&system),
            ..ContextAudit::default()
        },
    };
    // Index of the step whose decision may be executed.
    let mut current: Option<usize> = None;
    for turn in 0..config.max_steps {
        let prompt: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let prompt_chars = prompt.chars().count();
        let audit = &mut log.context_audit;
        audit.reasoner_calls += 1;
        if prompt_chars >= audit.max_prompt_chars {
            audit.max_prompt_chars = prompt_chars;
            audit.tool_spec_count = count_tool_specs(&messages[0].content);
        }
        audit.catalog_entries_in_prompt = audit.catalog_entries_in_prompt.max(catalog_entries(&prompt, pool));

        let reply = match reasoner.reply(&messages, derive_seed(config.seed, &format!("reasoner/{turn}"))) {
            Ok(r) => r,
            Err(e) => {
                log.outcome = EpisodeOutcome::Error { message: e.to_string() };
                return Ok(log);
            }
        };
        messages.push(ChatMessage::assistant(reply.clone()));
        let (event, result) = match parse_reply(&reply) {
            Parsed::Answer(answer) => {
                log.turns.push(ReasonerTurn {
                    prompt_chars,
                    reply,
                    event: TurnEvent::Answered,
                });
                log.outcome = EpisodeOutcome::Finished { answer };
                return Ok(log);
            }
            Parsed::Route(need) => {
                let history = history_turns(task, &log.steps);
                let decision = router.route(&RouteRequest {
                    query: &need,
                    history: &history,
                    pool,
                    label: None,
                    seed: derive_seed(config.seed, &format!("route/{turn}")),
                });
                let result = match decision.chosen.as_deref().and_then(|c| pool.spec(c)) {
                    Some(spec) => json!({"candidate": spec.name(), "inputSchema": spec.input_schema().to_value()}),
                    None => json!({"candidate": null, "error": decision.reason.clone().unwrap_or_default()}),
                };
                current = decision.chosen.is_some().then_some(log.steps.len());
                log.steps.push(EpisodeStep {
                    reasoner_text: reply.clone(),
                    query: need,
                    decision,
                    executions: Vec::new(),
                });
                (
                    TurnEvent::Routed {
                        step: log.steps.len() - 1,
                    },
                    result,
                )
            }
            Parsed::Execute(arguments) => match current {
                None => (
                    TurnEvent::ExecuteBeforeRoute,
                    json!({"error": format!("call {ROUTE_TOOL} before {EXECUTE_TOOL}")}),
                ),
                Some(step) => {
                    let candidate = log.steps[step].decision.chosen.clone().unwrap_or_default();
                    let outcome = executor.execute(pool, &candidate, &arguments);
                    let result = match &outcome {
                        Ok(output) => json!({"candidate": candidate, "output": output}),
                        Err(error) => json!({"candidate": candidate, "error": error}),
                    };
                    log.steps[step].executions.push(ExecutionRecord {
                        reasoner_text: reply.clone(),
                        candidate,
                        arguments,
                        output: outcome.as_ref().ok().cloned(),
                        error: outcome.err(),
                    });
                    (TurnEvent::Executed { step }, result)
                }
            },
            Parsed::Invalid(reason) => (TurnEvent::Invalid { reason: reason.clone() }, json!({"error": reason})),
        };
        log.turns.push(ReasonerTurn {
            prompt_chars,
            reply,
            event,
        });
        messages.push(tool_result(result));
    }
    Ok(log)
}

/// Runs independent episodes in parallel; episode `i` uses a seed derived from `config.seed`.
pub fn run_episodes(
    tasks: &[String],
    pool: &CandidatePool,
    router: &dyn Router,
    executor: &ExecutorBinding,
    reasoner: &dyn Reasoner,
    config: &EpisodeConfig,
) -> Result<Vec<EpisodeLog>, LraError> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let cfg = EpisodeConfig {
                seed: derive_seed(config.seed, &format!("episode/{i}")),
                ..*config
            };
            run_episode(task, pool, router, executor, reasoner, &cfg)
        })
        .collect()
}

pub fn save_episode_logs(logs: &[EpisodeLog], path: impl AsRef<Path>) -> Result<(), LraError> {
    let path = path.as_ref();
    let mut text = String::new();
    for log in logs {
        text.push_str(&serde_json::to_string(log).expect("episode logs serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| LraError::Io {
        path: path.to_path_buf(),
        source,
    })
}
