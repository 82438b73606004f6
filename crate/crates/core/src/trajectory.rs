//! Environment-free multi-turn trajectory synthesis.
//!
//! A task and coarse plan are proposed for a sampled subset, then a
//! simulated user and assistant alternate turns while a third role invents
//! the results of each candidate call. Every step goes through the gateway.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::prompts::{self, AssistantTurnContext, UserTurnContext};
use crate::registry::{CandidateKind, CandidateSpec, SpecLookup};
use crate::sampler::CandidateSubset;
use crate::supervision::render_transcript;
use crate::util::{derive_seed, rng_for, strip_code_fence};

pub const MAX_CALLS_PER_ACTION: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub goal: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task: String,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCall {
    pub name: String,
    pub arguments: Value,
    pub simulated_result: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl CandidateCall {
    pub fn new(name: impl Into<String>, arguments: Value, simulated_result: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arguments,
            simulated_result: simulated_result.into(),
            failed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// `<think>…</think>` when the action calls candidates, otherwise the
    /// assistant's reply to the user.
    pub text: String,
    #[serde(default)]
    pub calls: Vec<CandidateCall>,
    /// The assistant's follow-up after seeing call results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Turn {
    Observation { text: String },
    Action(Action),
}

impl Turn {
    pub fn observation(text: impl Into<String>) -> Self {
        Turn::Observation { text: text.into() }
    }

    pub fn action(text: impl Into<String>, calls: Vec<CandidateCall>, summary: Option<String>) -> Self {
        Turn::Action(Action {
            text: text.into(),
            calls,
            summary,
        })
    }

    pub fn as_action(&self) -> Option<&Action> {
        match self {
            Turn::Action(a) => Some(a),
            Turn::Observation { .. } => None,
        }
    }

    pub fn is_observation(&self) -> bool {
        matches!(self, Turn::Observation { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub kind: CandidateKind,
    pub subset: CandidateSubset,
    pub plan: TaskPlan,
    pub turns: Vec<Turn>,
}

impl Trajectory {
    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.turns.iter().filter_map(Turn::as_action)
    }

    pub fn call_count(&self) -> usize {
        self.actions().map(|a| a.calls.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    AlternationBroken,
    OutOfSubsetCall,
    SchemaViolatingArguments,
    /// An action carries more calls than one turn allows.
    OverLength,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub turn: usize,
    pub reason: DiscardReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("subset is empty")]
    EmptySubset,
    #[error("subset member `{0}` has no specification")]
    UnknownCandidate(String),
    #[error("plan is not parseable: {0}")]
    NotParseable(String),
    #[error("plan references `{0}`, which is not in the subset")]
    OutOfSubsetReference(String),
    #[error("plan rejected after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("trajectory discarded ({reason:?}): {detail}")]
    Discarded { reason: DiscardReason, detail: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("trajectory file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Upper bound on assistant actions; reaching it truncates the dialogue.
    pub max_turns: usize,
    /// Probability that a simulated call result is a failure.
    pub error_rate: f64,
    pub max_plan_retries: u32,
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_turns: 12,
            error_rate: 0.1,
            max_plan_retries: 2,
            model_id: "mock".into(),
            temperature: 0.7,
            seed: 0,
        }
    }
}

fn subset_specs<'a>(
    subset: &CandidateSubset,
    source: &'a impl SpecLookup,
) -> Result<Vec<&'a CandidateSpec>, TrajectoryError> {
    if subset.is_empty() {
        return Err(TrajectoryError::EmptySubset);
    }
    subset
        .members
        .iter()
        .map(|m| {
            source
                .lookup(m)
                .ok_or_else(|| TrajectoryError::UnknownCandidate(m.clone()))
        })
        .collect()
}

fn candidates_json(specs: &[&CandidateSpec]) -> String {
    let docs: Vec<Value> = specs.iter().map(|s| s.profile_document()).collect();
    serde_json::to_string_pretty(&docs).expect("json values serialize")
}

fn parse_plan(text: &str, subset: &CandidateSubset) -> Result<TaskPlan, TrajectoryError> {
    let plan: TaskPlan =
        serde_json::from_str(strip_code_fence(text)).map_err(|e| TrajectoryError::NotParseable(e.to_string()))?;
    if plan.task.trim().is_empty() {
        return Err(TrajectoryError::NotParseable("empty task".into()));
    }
    if plan.steps.is_empty() {
        return Err(TrajectoryError::NotParseable("plan has no steps".into()));
    }
    if let Some(step) = plan.steps.iter().find(|s| !subset.contains(&s.candidate)) {
        return Err(TrajectoryError::OutOfSubsetReference(step.candidate.clone()));
    }
    Ok(plan)
}

/// Asks the model for a task and coarse plan over the subset, retrying
/// with feedback when the reply is unusable.
pub fn propose_task(
    subset: &CandidateSubset,
    source: &impl SpecLookup,
    config: &SynthConfig,
    gateway: &Gateway,
    seed: u64,
) -> Result<TaskPlan, TrajectoryError> {
    let specs = subset_specs(subset, source)?;
    let prompt = prompts::task_prompt(source.kind(), &candidates_json(&specs));
    let mut request = ChatRequest::new(&config.model_id, vec![ChatMessage::user(prompt)])
        .with_temperature(config.temperature)
        .with_seed(derive_seed(seed, "plan"));
    let mut last = String::new();
    for _ in 0..=config.max_plan_retries {
        let reply = gateway.chat(&request)?;
        match parse_plan(&reply, subset) {
            Ok(plan) => return Ok(plan),
            Err(e) => {
                last = e.to_string();
                request.messages.push(ChatMessage::assistant(reply));
                request.messages.push(ChatMessage::user(format!(
                    "That plan was rejected: {e}. Use only the listed names and return the JSON object only."
                )));
            }
        }
    }
    Err(TrajectoryError::RetriesExhausted {
        attempts: config.max_plan_retries + 1,
        last,
    })
}

#[derive(Deserialize)]
struct RawCall {
    name: String,
    #[serde(default)]
    arguments: Value,
}

#[derive(Deserialize)]
struct RawAction {
    #[serde(default)]
    thought: String,
    #[serde(default)]
    calls: Vec<RawCall>,
    #[serde(default)]
    answer: String,
}

fn parse_action(reply: &str) -> RawAction {
    serde_json::from_str(strip_code_fence(reply)).unwrap_or_else(|_| RawAction {
        thought: String::new(),
        calls: Vec::new(),
        answer: reply.trim().to_string(),
    })
}

fn discard(reason: DiscardReason, detail: impl Into<String>) -> TrajectoryError {
    TrajectoryError::Discarded {
        reason,
        detail: detail.into(),
    }
}

/// Runs the role-played dialogue for one plan.
pub fn simulate_trajectory(
    id: impl Into<String>,
    plan: &TaskPlan,
    subset: &CandidateSubset,
    source: &impl SpecLookup,
    config: &SynthConfig,
    gateway: &Gateway,
    seed: u64,
) -> Result<Trajectory, TrajectoryError> {
    let specs = subset_specs(subset, source)?;
    let kind = source.kind();
    let catalog = candidates_json(&specs);
    let outline: String = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {} ({})", i + 1, s.goal, s.candidate))
        .collect::<Vec<_>>()
        .join("\n");
    let mut rng = rng_for(seed, "simulate");
    let mut turns: Vec<Turn> = Vec::new();
    let mut step = 0usize;
    let mut previous_failed = false;
    let ask = |prompt: String, label: String| -> Result<String, TrajectoryError> {
        let request = ChatRequest::new(&config.model_id, vec![ChatMessage::user(prompt)])
            .with_temperature(config.temperature)
            .with_seed(derive_seed(seed, &label));
        Ok(gateway.chat(&request)?.trim().to_string())
    };
    let mut actions = 0usize;
    while actions < config.max_turns {
        let transcript = render_transcript(&turns, kind);
        let user = ask(
            prompts::user_sim_prompt(&UserTurnContext {
                task: &plan.task,
                plan_outline: &outline,
                transcript: &transcript,
                next_goal: plan.steps.get(step).map(|s| s.goal.as_str()),
                opening: turns.is_empty(),
                previous_failed,
            }),
            format!("user/{actions}"),
        )?;
        turns.push(Turn::observation(user));
        let transcript = render_transcript(&turns, kind);
        let planned = plan.steps.get(step);
        let reply = ask(
            prompts::assistant_sim_prompt(&AssistantTurnContext {
                kind,
                candidates_json: &catalog,
                transcript: &transcript,
                planned: planned.map(|s| (s.candidate.as_str(), s.goal.as_str())),
            }),
            format!("assistant/{actions}"),
        )?;
        actions += 1;
        let raw = parse_action(&reply);
        if raw.calls.len() > MAX_CALLS_PER_ACTION {
            return Err(discard(
                DiscardReason::OverLength,
                format!("action {} makes {} calls", actions - 1, raw.calls.len()),
            ));
        }
        if raw.calls.is_empty() {
            let text = if raw.answer.is_empty() { raw.thought } else { raw.answer };
            turns.push(Turn::action(text, Vec::new(), None));
            if step >= plan.steps.len() {
                break;
            }
            continue;
        }
        let mut calls = Vec::with_capacity(raw.calls.len());
        for (i, call) in raw.calls.into_iter().enumerate() {
            let spec = specs
                .iter()
                .find(|s| s.name() == call.name)
                .ok_or_else(|| discard(DiscardReason::OutOfSubsetCall, format!("call to `{}`", call.name)))?;
            spec.input_schema()
                .check_arguments(&call.arguments)
                .map_err(|e| discard(DiscardReason::SchemaViolatingArguments, format!("`{}`: {e}", call.name)))?;
            let fail = rng.random_bool(config.error_rate.clamp(0.0, 1.0));
            let result = ask(
                prompts::result_sim_prompt(
                    &serde_json::to_string_pretty(&spec.profile_document()).expect("json values serialize"),
                    &call.name,
                    &call.arguments.to_string(),
                    fail,
                ),
                format!("result/{actions}/{i}"),
            )?;
            calls.push(CandidateCall {
                name: call.name,
                arguments: call.arguments,
                simulated_result: result,
                failed: fail,
            });
        }
        let last = calls.last().expect("non-empty calls");
        let summary = ask(
            prompts::summary_prompt(&last.name, &last.simulated_result, last.failed),
            format!("summary/{actions}"),
        )?;
        previous_failed = calls.iter().any(|c| c.failed);
        for c in calls.iter().filter(|c| !c.failed) {
            if plan.steps.get(step).is_some_and(|s| s.candidate == c.name) {
                step += 1;
            }
        }
        turns.push(Turn::action(
            format!("<think>{}</think>", raw.thought),
            calls,
            Some(summary),
        ));
    }
    let trajectory = Trajectory {
        id: id.into(),
        kind,
        subset: subset.clone(),
        plan: plan.clone(),
        turns,
    };
    let report = validate_trajectory(&trajectory, source);
    if let Some(v) = report.violations.into_iter().next() {
        return Err(discard(v.reason, v.detail));
    }
    Ok(trajectory)
}

/// Structural and schema checks; never fails, lists every violation.
pub fn validate_trajectory(trajectory: &Trajectory, source: &impl SpecLookup) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push =
        |turn: usize, reason: DiscardReason, detail: String| violations.push(Violation { turn, reason, detail });
    if trajectory.turns.len() < 2 {
        push(0, DiscardReason::AlternationBroken, "fewer than two turns".into());
    }
    for (i, turn) in trajectory.turns.iter().enumerate() {
        let expect_observation = i % 2 == 0;
        if turn.is_observation() != expect_observation {
            let expected = if expect_observation {
                "an observation"
            } else {
                "an action"
            };
            push(
                i,
                DiscardReason::AlternationBroken,
                format!("turn {i} should be {expected}"),
            );
        }
        let Some(action) = turn.as_action() else { continue };
        if action.calls.len() > MAX_CALLS_PER_ACTION {
            push(
                i,
                DiscardReason::OverLength,
                format!("{} calls in one action", action.calls.len()),
            );
        }
        for call in &action.calls {
            if !trajectory.subset.contains(&call.name) {
                push(i, DiscardReason::OutOfSubsetCall, format!("call to `{}`", call.name));
                continue;
            }
            match source.lookup(&call.name) {
                Some(spec) => {
                    if let Err(e) = spec.input_schema().check_arguments(&call.arguments) {
                        push(
                            i,
                            DiscardReason::SchemaViolatingArguments,
                            format!("`{}`: {e}", call.name),
                        );
                    }
                }
                None => push(
                    i,
                    DiscardReason::OutOfSubsetCall,
                    format!("`{}` has no specification", call.name),
                ),
            }
        }
    }
    ValidationReport { violations }
}

#[derive(Debug)]
pub struct SynthesisOutcome {
    pub trajectories: Vec<Trajectory>,
    /// Index of each failed sample with its error.
    pub failures: Vec<(usize, TrajectoryError)>,
}

/// Proposes and simulates one trajectory per subset, in parallel.
/// Results are ordered by subset index.
pub fn synthesize(
    subsets: &[CandidateSubset],
    source: &(impl SpecLookup + Sync),
    config: &SynthConfig,
    gateway: &Gateway,
) -> SynthesisOutcome {
    let results: Vec<Result<Trajectory, TrajectoryError>> = subsets
        .par_iter()
        .enumerate()
        .map(|(i, subset)| {
            let seed = derive_seed(config.seed, &format!("trajectory/{i}"));
            let plan = propose_task(subset, source, config, gateway, seed)?;
            simulate_trajectory(format!("traj-{i:05}"), &plan, subset, source, config, gateway, seed)
        })
        .collect();
    let mut outcome = SynthesisOutcome {
        trajectories: Vec::new(),
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => outcome.trajectories.push(t),
            Err(e) => outcome.failures.push((i, e)),
        }
    }
    outcome
}

pub fn render_trajectories(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("trajectories serialize"));
        out.push('\n');
    }
    out
}

pub fn save_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(render_trajectories(trajectories).as_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>, TrajectoryError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TrajectoryError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Plain record of a trajectory's call labels, for recount checks.
pub fn call_labels(trajectory: &Trajectory) -> Vec<String> {
    trajectory
        .actions()
        .flat_map(|a| a.calls.iter().map(|c| c.name.clone()))
        .collect()
}
