//! Offline backends: a template-driven chat model and a hashing embedder.
//!
//! The chat mock recognizes each pipeline prompt by its marker line and
//! answers with a schema-valid reply. Every reply is a pure function of the
//! mock seed and the request fingerprint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, EmbeddingBackend, Role, TokenUsage};
use crate::prompts::{self, between, line_after};
use crate::util::stable_hash;

pub const MOCK_EMBEDDING_DIM: usize = 64;

const EMPTY_TOKEN: &str = "\u{0}empty";

/// Lowercased alphanumeric tokens; underscores split words.
pub(crate) fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Seeded bag-of-words embedder: each token maps to a fixed pseudo-random
/// direction; a text embeds to the normalized sum of its token directions.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash([&self.seed.to_le_bytes()[..], token.as_bytes()]));
        for v in out.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; MOCK_EMBEDDING_DIM];
        let mut any = false;
        for token in tokenize(text) {
            self.token_vector(&token, &mut acc);
            any = true;
        }
        if !any {
            self.token_vector(EMPTY_TOKEN, &mut acc);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            acc = vec![0.0; MOCK_EMBEDDING_DIM];
            acc[0] = 1.0;
            return acc;
        }
        acc.iter().map(|v| v / norm).collect()
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn model_id(&self) -> String {
        format!("mock-hash-{MOCK_EMBEDDING_DIM}")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Template-driven chat model for offline runs.
#[derive(Debug, Clone)]
pub struct MockChat {
    seed: u64,
}

impl MockChat {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn reply(&self, request: &ChatRequest) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash([
            self.seed.to_le_bytes(),
            request.fingerprint().to_le_bytes(),
        ]));
        let first = request
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let last_user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        if first.starts_with(prompts::TOOL_MUTATION_MARKER) {
            tool_mutation(first, &mut rng)
        } else if first.starts_with(prompts::AGENT_MUTATION_MARKER) {
            agent_mutation(first, &mut rng)
        } else if first.starts_with(prompts::TASK_MARKER) {
            task_plan(first, &mut rng)
        } else if first.starts_with(prompts::USER_SIM_MARKER) {
            user_turn(first, &mut rng)
        } else if first.starts_with(prompts::ASSISTANT_SIM_MARKER) {
            assistant_turn(first, &mut rng)
        } else if first.starts_with(prompts::RESULT_SIM_MARKER) {
            tool_result(first, &mut rng)
        } else if first.starts_with(prompts::SUMMARY_MARKER) {
            summary(first)
        } else if first.starts_with(prompts::REASONER_MARKER) {
            reasoner_turn(request, &mut rng)
        } else if last_user.contains("<current query>") {
            route(last_user, request.temperature, &mut rng)
        } else {
            format!("Acknowledged ({} characters received).", request.prompt_chars())
        }
    }
}

impl ChatBackend for MockChat {
    fn backend_id(&self) -> String {
        format!("mock:{}", self.seed)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self.reply(request);
        Ok(ChatResponse {
            usage: TokenUsage {
                prompt_tokens: (request.prompt_chars() / 4).max(1) as u64,
                completion_tokens: (text.len() / 4).max(1) as u64,
            },
            text,
        })
    }
}

fn hex6(rng: &mut ChaCha8Rng) -> String {
    format!("{:06x}", rng.random::<u32>() & 0x00ff_ffff)
}

const TOOL_PREFIXES: [(&str, &str); 5] = [
    ("Usage Extension", "extended"),
    ("Function Enhancement", "enhanced"),
    ("Workflow Chain", "chained"),
    ("Helper Tool", "helper"),
    ("Parameter Redesign", "flexible"),
];

const AGENT_PREFIXES: [(&str, &str); 5] = [
    ("Domain Transfer", "transferred"),
    ("Capability Enhancement", "advanced"),
    ("Workflow Specialization", "specialized"),
    ("Tool Composition", "composed"),
    ("Scenario Adaptation", "adapted"),
];

const VARIANT_MARK: &str = " Variant focus: ";

/// Name stem of a candidate with earlier mock prefixes and suffixes removed.
fn name_root(name: &str) -> String {
    let mut root = name.strip_suffix("_agent").unwrap_or(name).to_string();
    loop {
        let before = root.clone();
        for (_, prefix) in TOOL_PREFIXES.iter().chain(AGENT_PREFIXES.iter()) {
            if let Some(rest) = root.strip_prefix(&format!("{prefix}_")) {
                root = rest.to_string();
            }
        }
        if let Some((head, tail)) = root.rsplit_once('_') {
            if tail.len() == 6 && tail.chars().all(|c| c.is_ascii_hexdigit()) && !head.is_empty() {
                root = head.to_string();
            }
        }
        if root == before {
            break;
        }
    }
    if root.is_empty() {
        "candidate".into()
    } else {
        root
    }
}

fn base_description(description: &str) -> &str {
    description.split(VARIANT_MARK).next().unwrap_or(description).trim()
}

fn with_property(props: &mut Map<String, Value>, name: &str, ty: &str, description: &str) {
    props
        .entry(name.to_string())
        .or_insert_with(|| json!({"type": ty, "description": description}));
}

fn tool_mutation(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let strategy = line_after(prompt, prompts::MUTATION_STRATEGY_HEADING).unwrap_or("");
    let prefix = TOOL_PREFIXES
        .iter()
        .find(|(n, _)| *n == strategy)
        .map(|(_, p)| *p)
        .unwrap_or("variant");
    let base: Value = between(
        prompt,
        prompts::ORIGINAL_TOOL_HEADING,
        prompts::MUTATION_STRATEGY_HEADING,
    )
    .and_then(|s| serde_json::from_str(s.trim()).ok())
    .unwrap_or_else(|| json!({}));
    let base_name = base.get("name").and_then(Value::as_str).unwrap_or("tool");
    let base_desc = base.get("description").and_then(Value::as_str).unwrap_or("");
    let tags: Value = line_after(prompt, "Keep the same domain tags: ")
        .and_then(|s| serde_json::from_str(s).ok())
        .or_else(|| base.get("tags").cloned())
        .unwrap_or_else(|| json!([]));
    let mut props = base
        .pointer("/inputSchema/properties")
        .and_then(Value::as_object)
        .cloned()
        .unwrap_or_default();
    let mut required: Vec<Value> = base
        .pointer("/inputSchema/required")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let focus = match prefix {
        "extended" => {
            with_property(
                &mut props,
                "target_domain",
                "string",
                "Domain the operation is applied to",
            );
            "applies the same logic to related domains"
        }
        "enhanced" => {
            with_property(
                &mut props,
                "batch_mode",
                "boolean",
                "Process several inputs in one call",
            );
            with_property(&mut props, "output_format", "string", "Format of the produced output");
            "adds batch processing and configurable output formats"
        }
        "chained" => {
            with_property(
                &mut props,
                "upstream_result",
                "string",
                "Output of the preceding workflow step",
            );
            "prepares inputs for or post-processes outputs of the original step"
        }
        "helper" => {
            with_property(&mut props, "check_level", "string", "Depth of the supporting checks");
            "provides supporting checks and suggestions around the original operation"
        }
        "flexible" => {
            props = Map::new();
            with_property(
                &mut props,
                "filters",
                "object",
                "Criteria selecting the records to act on",
            );
            with_property(&mut props, "sort", "string", "Sort order of the results");
            with_property(&mut props, "limit", "integer", "Maximum number of results");
            required.clear();
            "accepts flexible filters, sorting and limits"
        }
        _ => "offers a related variation",
    };
    let name = format!("{prefix}_{}_{}", name_root(base_name), hex6(rng));
    let mut schema = json!({"type": "object", "properties": props});
    if !required.is_empty() {
        schema["required"] = Value::Array(required);
    }
    let doc = json!({
        "name": name,
        "description": format!("{}{VARIANT_MARK}{focus}.", base_description(base_desc)),
        "inputSchema": schema,
        "tags": tags,
    });
    serde_json::to_string_pretty(&doc).expect("json values serialize")
}

fn agent_mutation(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let strategy = line_after(prompt, prompts::MUTATION_STRATEGY_HEADING).unwrap_or("");
    let prefix = AGENT_PREFIXES
        .iter()
        .find(|(n, _)| *n == strategy)
        .map(|(_, p)| *p)
        .unwrap_or("variant");
    let base_name = line_after(prompt, prompts::AGENT_NAME_LABEL).unwrap_or("agent");
    let base_desc = line_after(prompt, prompts::AGENT_DESCRIPTION_LABEL).unwrap_or("");
    let tools: Vec<String> = between(prompt, prompts::AGENT_TOOLS_LABEL, prompts::AGENT_SCHEMA_LABEL)
        .and_then(|s| serde_json::from_str(s.trim()).ok())
        .unwrap_or_default();
    let schema: Value = between(prompt, prompts::AGENT_SCHEMA_LABEL, prompts::MUTATION_STRATEGY_HEADING)
        .and_then(|s| serde_json::from_str(s.trim()).ok())
        .unwrap_or_else(|| json!({"type": "object", "properties": {}}));
    let mut props = schema
        .get("properties")
        .and_then(Value::as_object)
        .cloned()
        .unwrap_or_default();
    for (key, prop) in props.iter_mut() {
        if prop.get("description").is_none() {
            prop["description"] = json!(format!("The {key} setting"));
        }
    }
    let hex = hex6(rng);
    let (focus, new_tool, tag) = match prefix {
        "transferred" => (
            "carries the same workflow over to a related domain",
            "adapt_domain_inputs",
            "analysis agent",
        ),
        "advanced" => (
            "adds broader analysis and reporting capabilities",
            "generate_insight_report",
            "automation agent",
        ),
        "specialized" => (
            "focuses on a narrower part of the original workflow",
            "validate_focused_step",
            "analysis agent",
        ),
        "composed" => (
            "recombines the original tools into a new workflow",
            "orchestrate_tool_chain",
            "automation agent",
        ),
        "adapted" => (
            "adapts the original capabilities to a new user scenario",
            "tailor_scenario_context",
            "research agent",
        ),
        _ => ("offers a related variation", "run_variant_step", "general agent"),
    };
    let mut new_tools: Vec<String> = tools.into_iter().take(7).collect();
    let extra = format!("{new_tool}_{hex}");
    if !new_tools.contains(&extra) {
        new_tools.push(extra);
    }
    with_property(
        &mut props,
        "focus_area",
        "string",
        "Area of the workflow this agent concentrates on",
    );
    let doc = json!({
        "name": format!("{prefix}_{}_{hex}_agent", name_root(base_name)),
        "description": format!("{}{VARIANT_MARK}{focus}.", base_description(base_desc)),
        "tools": new_tools,
        "inputSchema": {"type": "object", "properties": props},
        "tags": [tag],
    });
    serde_json::to_string_pretty(&doc).expect("json values serialize")
}

fn candidates_block(prompt: &str) -> Vec<Value> {
    between(prompt, prompts::CANDIDATES_OPEN, prompts::CANDIDATES_CLOSE)
        .and_then(|s| serde_json::from_str::<Vec<Value>>(s.trim()).ok())
        .unwrap_or_default()
}

fn first_sentence(text: &str) -> String {
    let base = base_description(text);
    let end = base.find(". ").map(|i| i + 1).unwrap_or(base.len());
    base[..end].trim().trim_end_matches('.').to_string()
}

const TASK_OPENERS: [&str; 3] = [
    "I am working on a project and need help with several things",
    "Please help me get a multi-step job done",
    "I have a workflow to run end to end",
];

fn task_plan(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let candidates = candidates_block(prompt);
    let steps: Vec<Value> = candidates
        .iter()
        .filter_map(|c| {
            let name = c.get("name")?.as_str()?;
            let desc = c.get("description").and_then(Value::as_str).unwrap_or(name);
            Some(json!({
                "goal": format!("I need something that can handle this: {}", first_sentence(desc).to_lowercase()),
                "candidate": name,
            }))
        })
        .collect();
    let opener = TASK_OPENERS[rng.random_range(0..TASK_OPENERS.len())];
    let task = format!("{opener}: {} step(s) in total.", steps.len());
    serde_json::to_string(&json!({"task": task, "steps": steps})).expect("json values serialize")
}

fn user_turn(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let task = line_after(prompt, prompts::TASK_LABEL).unwrap_or("");
    let goal = line_after(prompt, prompts::GOAL_LABEL).unwrap_or(prompts::ALL_DONE);
    if goal == prompts::ALL_DONE {
        return [
            "Thanks, please summarize what was done.",
            "Great, that covers everything. Please summarize.",
        ][rng.random_range(0..2)]
        .to_string();
    }
    if prompt.contains(prompts::FAILURE_FLAG) {
        return format!("That did not work. Please try again: {goal}.");
    }
    if prompt.contains(prompts::OPENING_FLAG) {
        return format!("{task} First, {goal}.");
    }
    let lead = ["Thanks. Next", "Good. Now", "Okay. Next"][rng.random_range(0..3)];
    format!("{lead}: {goal}.")
}

/// Placeholder arguments satisfying `schema`: every required property plus
/// a random selection of the optional ones.
pub(crate) fn placeholder_arguments(schema: &Value, rng: &mut impl Rng) -> Value {
    let mut args = Map::new();
    let required: Vec<&str> = schema
        .get("required")
        .and_then(Value::as_array)
        .map(|r| r.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (name, prop) in props {
            if !required.contains(&name.as_str()) && !rng.random_bool(0.5) {
                continue;
            }
            let value = match prop.get("type").and_then(Value::as_str) {
                Some("integer") => json!(rng.random_range(1..100)),
                Some("number") => json!(rng.random_range(1..1000) as f64 / 10.0),
                Some("boolean") => json!(rng.random_bool(0.5)),
                Some("array") => json!([format!("sample_{name}")]),
                Some("object") => json!({}),
                Some("null") => Value::Null,
                _ => json!(format!("sample_{name}")),
            };
            args.insert(name.clone(), value);
        }
    }
    Value::Object(args)
}

fn assistant_turn(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let planned = line_after(prompt, prompts::PLANNED_LABEL).unwrap_or(prompts::ALL_DONE);
    if planned == prompts::ALL_DONE {
        return json!({
            "thought": "All planned steps are complete; summarize for the user.",
            "calls": [],
            "answer": "Everything you asked for is done. Here is a summary of the results above.",
        })
        .to_string();
    }
    let candidates = candidates_block(prompt);
    let schema = candidates
        .iter()
        .find(|c| c.get("name").and_then(Value::as_str) == Some(planned))
        .and_then(|c| c.get("inputSchema"))
        .cloned()
        .unwrap_or_else(|| json!({}));
    let arguments = placeholder_arguments(&schema, rng);
    json!({
        "thought": format!("The user's request matches what {planned} does, so I will call it."),
        "calls": [{"name": planned, "arguments": arguments}],
        "answer": "",
    })
    .to_string()
}

fn tool_result(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let name = line_after(prompt, prompts::CANDIDATE_LABEL).unwrap_or("candidate");
    if line_after(prompt, prompts::OUTCOME_LABEL) == Some("failure") {
        let code = [500, 502, 503, 504][rng.random_range(0..4)];
        return format!("Error: {name} failed with status {code} (service temporarily unavailable)");
    }
    json!({
        "status": "ok",
        "candidate": name,
        "items": rng.random_range(1..20),
        "output": format!("{name} completed successfully"),
    })
    .to_string()
}

fn summary(prompt: &str) -> String {
    let name = line_after(prompt, prompts::CANDIDATE_LABEL).unwrap_or("the candidate");
    if line_after(prompt, prompts::OUTCOME_LABEL) == Some("failure") {
        format!("The call to {name} failed; I will try again.")
    } else {
        format!("{name} finished and returned the requested results.")
    }
}

fn lexical_score(query: &std::collections::BTreeSet<String>, candidate: &Value) -> f64 {
    let text = format!(
        "{} {}",
        candidate.get("name").and_then(Value::as_str).unwrap_or(""),
        candidate.get("description").and_then(Value::as_str).unwrap_or("")
    );
    let tokens: std::collections::BTreeSet<String> = tokenize(&text).collect();
    if tokens.is_empty() || query.is_empty() {
        return 0.0;
    }
    let shared = tokens.intersection(query).count() as f64;
    shared / (tokens.len() as f64).sqrt()
}

fn route(user: &str, temperature: f64, rng: &mut ChaCha8Rng) -> String {
    let query = between(user, "<current query>", "</current query>").unwrap_or("");
    let pool_text = between(user, "<agents>", "</agents>").or_else(|| between(user, "<tools>", "</tools>"));
    let pool: Vec<Value> = pool_text.and_then(|s| serde_json::from_str(s).ok()).unwrap_or_default();
    let names: Vec<&str> = pool
        .iter()
        .filter_map(|c| c.get("name").and_then(Value::as_str))
        .collect();
    if names.is_empty() {
        return "<think>No candidates were offered.</think>\n\n[]".into();
    }
    let query_tokens = tokenize(query).collect();
    let scores: Vec<f64> = pool.iter().map(|c| lexical_score(&query_tokens, c)).collect();
    let chosen = if temperature <= 0.0 {
        let mut best = 0;
        for i in 1..names.len() {
            if scores[i] > scores[best] || (scores[i] == scores[best] && names[i] < names[best]) {
                best = i;
            }
        }
        best
    } else {
        let top = scores.iter().cloned().fold(f64::MIN, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| ((s - top) * 8.0 / temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.random_range(0.0..total);
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if draw < *w {
                pick = i;
                break;
            }
            draw -= w;
        }
        pick
    };
    format!(
        "<think>The query shares the most vocabulary with {}.</think>\n\n[\"{}\"]",
        names[chosen], names[chosen]
    )
}

/// Drives the light routing agent's reasoner through route → execute for
/// each need in the task (needs separated by `;`), then answers.
fn reasoner_turn(request: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
    let task = request
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let needs: Vec<&str> = task.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
    let actions: Vec<Value> = request
        .messages
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .filter_map(|m| serde_json::from_str(&m.content).ok())
        .collect();
    let executed = actions
        .iter()
        .filter(|a| a.get("tool").and_then(Value::as_str) == Some(prompts::EXECUTE_TOOL))
        .count();
    let last_tool = actions.last().and_then(|a| a.get("tool")).and_then(Value::as_str);
    let observation = request
        .messages
        .last()
        .filter(|m| m.role == Role::User)
        .and_then(|m| m.content.strip_prefix(prompts::TOOL_RESULT_LABEL))
        .and_then(|s| serde_json::from_str::<Value>(s).ok());
    if last_tool == Some(prompts::ROUTE_TOOL) {
        let routed = observation
            .as_ref()
            .and_then(|o| o.get("candidate"))
            .and_then(Value::as_str);
        if let Some(name) = routed {
            let schema = observation
                .as_ref()
                .and_then(|o| o.get("inputSchema"))
                .cloned()
                .unwrap_or_else(|| json!({}));
            return json!({
                "thought": format!("Run {name} for this step."),
                "tool": prompts::EXECUTE_TOOL,
                "arguments": {"arguments": placeholder_arguments(&schema, rng)},
            })
            .to_string();
        }
        return json!({
            "thought": "Routing failed; stop here.",
            "answer": "I could not find a suitable candidate for the remaining work.",
        })
        .to_string();
    }
    if executed < needs.len() {
        return json!({
            "thought": format!("Step {} of {}.", executed + 1, needs.len()),
            "tool": prompts::ROUTE_TOOL,
            "arguments": {"need": needs[executed]},
        })
        .to_string();
    }
    json!({
        "thought": "All needs are handled.",
        "answer": format!("Completed {executed} step(s)."),
    })
    .to_string()
}
