//! Routing supervision from trajectories: (query, history, pool, label)
//! instances, their rendering into router prompts, and dataset files.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::prompts;
use crate::registry::{CandidateBank, CandidateKind, CandidatePool, PoolError};
use crate::trajectory::{Trajectory, Turn};

pub const DEFAULT_GROUP: &str = "all";

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("trajectory {trajectory}: label `{label}` is not in the pool")]
    PoolMissingLabel { trajectory: String, label: String },
    #[error("pool member `{0}` cannot be resolved")]
    UnresolvedPoolMember(String),
    #[error("expected {expected} pools, got {found}")]
    PoolCount { expected: usize, found: usize },
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// JSON with `", "` and `": "` separators, as in the router transcripts.
struct SpacedFormatter;

impl Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

pub fn spaced_json(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SpacedFormatter);
    value.serialize(&mut ser).expect("json values serialize");
    String::from_utf8(out).expect("serde_json emits utf-8")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn call_tag(kind: CandidateKind) -> &'static str {
    match kind {
        CandidateKind::Agent => "agent_call",
        CandidateKind::Tool => "tool_call",
    }
}

/// Renders turns as a `User:` / `Assistant:` transcript with call tags and
/// tool results; exchanges are separated by a blank line.
pub fn render_transcript(turns: &[Turn], kind: CandidateKind) -> String {
    let tag = call_tag(kind);
    let mut lines: Vec<String> = Vec::new();
    for turn in turns {
        match turn {
            Turn::Observation { text } => {
                if !lines.is_empty() {
                    lines.push(String::new());
                }
                lines.push(format!("User: {}", one_line(text)));
            }
            Turn::Action(action) => {
                lines.push(format!("Assistant: {}", one_line(&action.text)));
                for call in &action.calls {
                    lines.push(format!("<{tag}>{}{}</{tag}>", call.name, spaced_json(&call.arguments)));
                }
                if !action.calls.is_empty() {
                    let results: Vec<String> = action.calls.iter().map(|c| one_line(&c.simulated_result)).collect();
                    lines.push(format!("Tool results: {}", results.join(" | ")));
                }
                if let Some(summary) = &action.summary {
                    lines.push(format!("Assistant: {}", one_line(summary)));
                }
            }
        }
    }
    lines.join("\n")
}

pub fn history_block(turns: &[Turn], kind: CandidateKind) -> String {
    if turns.is_empty() {
        "<history></history>".into()
    } else {
        format!("<history>\n{}\n</history>", render_transcript(turns, kind))
    }
}

/// Counts observation and action turns in a rendered `<history>` block.
pub fn count_history_turns(user_text: &str) -> Option<usize> {
    let body = prompts::between(user_text, "<history>", "</history>")?;
    let mut count = 0;
    let mut previous_user = false;
    for line in body.lines() {
        if line.starts_with("User: ") {
            count += 1;
            previous_user = true;
        } else if line.starts_with("Assistant: ") {
            if previous_user {
                count += 1;
            }
            previous_user = false;
        } else if !line.is_empty() {
            previous_user = false;
        }
    }
    Some(count)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceOrigin {
    pub trajectory_id: String,
    /// Index of the action among the trajectory's actions.
    pub step: usize,
    /// Index of the call within the action.
    pub call: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingInstance {
    pub query: String,
    pub history: Vec<Turn>,
    pub pool: CandidatePool,
    pub label: String,
    pub origin: InstanceOrigin,
    pub group: String,
}

fn group_of(pool: &CandidatePool, label: &str) -> String {
    pool.spec(label)
        .and_then(|s| s.tags().first().cloned())
        .unwrap_or_else(|| DEFAULT_GROUP.to_string())
}

/// One instance per candidate call, in temporal order. The query is the
/// observation right before the action; the history is everything before
/// that observation.
pub fn extract_instances(
    trajectory: &Trajectory,
    pool: &CandidatePool,
) -> Result<Vec<RoutingInstance>, SupervisionError> {
    let mut out = Vec::new();
    let mut step = 0;
    let mut last_observation: Option<usize> = None;
    for (i, turn) in trajectory.turns.iter().enumerate() {
        let Some(action) = turn.as_action() else {
            last_observation = Some(i);
            continue;
        };
        if let Some(q) = last_observation {
            let Turn::Observation { text } = &trajectory.turns[q] else {
                unreachable!("index points at an observation")
            };
            for (c, call) in action.calls.iter().enumerate() {
                if !pool.contains(&call.name) {
                    return Err(SupervisionError::PoolMissingLabel {
                        trajectory: trajectory.id.clone(),
                        label: call.name.clone(),
                    });
                }
                out.push(RoutingInstance {
                    query: text.clone(),
                    history: trajectory.turns[..q].to_vec(),
                    pool: pool.clone(),
                    label: call.name.clone(),
                    origin: InstanceOrigin {
                        trajectory_id: trajectory.id.clone(),
                        step,
                        call: c,
                    },
                    group: group_of(pool, &call.name),
                });
            }
        }
        step += 1;
    }
    Ok(out)
}

pub fn strip_history(instance: &RoutingInstance) -> RoutingInstance {
    RoutingInstance {
        history: Vec::new(),
        ..instance.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSample {
    pub system: String,
    pub user: String,
    pub expected: Vec<String>,
}

/// Pretty JSON array of the pool's profile documents, in member order.
pub fn pool_block(pool: &CandidatePool) -> Result<String, SupervisionError> {
    let docs = pool
        .members()
        .iter()
        .map(|m| {
            pool.spec(m)
                .map(|s| s.profile_document())
                .ok_or_else(|| SupervisionError::UnresolvedPoolMember(m.clone()))
        })
        .collect::<Result<Vec<Value>, _>>()?;
    Ok(serde_json::to_string_pretty(&docs).expect("json values serialize"))
}

/// Router prompt pair for a query, history and pool.
pub fn render_prompt(
    query: &str,
    history: &[Turn],
    pool: &CandidatePool,
) -> Result<(String, String), SupervisionError> {
    let kind = pool.kind();
    let system = prompts::router_system_prompt(kind);
    let user = prompts::router_user_prompt(
        kind,
        &history_block(history, kind),
        &one_line(query),
        &pool_block(pool)?,
    );
    Ok((system, user))
}

pub fn render_sample(instance: &RoutingInstance) -> Result<RenderedSample, SupervisionError> {
    let (system, user) = render_prompt(&instance.query, &instance.history, &instance.pool)?;
    Ok(RenderedSample {
        system,
        user,
        expected: vec![instance.label.clone()],
    })
}

/// Structured twin of a rendered sample, kept so evaluation can rebuild
/// pools without re-parsing prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub query: String,
    pub history: Vec<Turn>,
    pub pool: Vec<String>,
    pub label: String,
    pub origin: InstanceOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub kind: CandidateKind,
    pub sample: RenderedSample,
    pub group: String,
    pub instance: InstanceRecord,
}

fn expected_key(kind: CandidateKind) -> &'static str {
    match kind {
        CandidateKind::Agent => "expected_agent",
        CandidateKind::Tool => "expected_tool",
    }
}

impl DatasetRecord {
    pub fn from_instance(instance: &RoutingInstance) -> Result<Self, SupervisionError> {
        Ok(Self {
            kind: instance.pool.kind(),
            sample: render_sample(instance)?,
            group: instance.group.clone(),
            instance: InstanceRecord {
                query: instance.query.clone(),
                history: instance.history.clone(),
                pool: instance.pool.members().to_vec(),
                label: instance.label.clone(),
                origin: instance.origin.clone(),
            },
        })
    }

    pub fn to_value(&self) -> Value {
        let mut out = Map::new();
        out.insert("system".into(), json!(self.sample.system));
        out.insert("user".into(), json!(self.sample.user));
        out.insert(expected_key(self.kind).into(), json!(self.sample.expected));
        out.insert("group".into(), json!(self.group));
        out.insert(
            "instance".into(),
            serde_json::to_value(&self.instance).expect("instances serialize"),
        );
        Value::Object(out)
    }

    pub fn from_value(value: &Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("record is not an object")?;
        let text = |key: &str| -> Result<String, String> {
            obj.get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("missing string field `{key}`"))
        };
        let (kind, expected) = if let Some(v) = obj.get("expected_agent") {
            (CandidateKind::Agent, v)
        } else if let Some(v) = obj.get("expected_tool") {
            (CandidateKind::Tool, v)
        } else {
            return Err("missing `expected_agent` or `expected_tool`".into());
        };
        let expected: Vec<String> = serde_json::from_value(expected.clone()).map_err(|e| e.to_string())?;
        let instance: InstanceRecord =
            serde_json::from_value(obj.get("instance").cloned().ok_or("missing `instance`")?)
                .map_err(|e| format!("instance: {e}"))?;
        if expected != [instance.label.clone()] {
            return Err("expected names disagree with the instance label".into());
        }
        Ok(Self {
            kind,
            sample: RenderedSample {
                system: text("system")?,
                user: text("user")?,
                expected,
            },
            group: obj
                .get("group")
                .and_then(Value::as_str)
                .unwrap_or(DEFAULT_GROUP)
                .to_string(),
            instance,
        })
    }

    /// Rebuilds the routing instance against `bank`.
    pub fn to_instance(&self, bank: Arc<CandidateBank>) -> Result<RoutingInstance, SupervisionError> {
        let pool = CandidatePool::new(bank, self.instance.pool.iter().cloned())?;
        if !pool.contains(&self.instance.label) {
            return Err(SupervisionError::PoolMissingLabel {
                trajectory: self.instance.origin.trajectory_id.clone(),
                label: self.instance.label.clone(),
            });
        }
        Ok(RoutingInstance {
            query: self.instance.query.clone(),
            history: self.instance.history.clone(),
            pool,
            label: self.instance.label.clone(),
            origin: self.instance.origin.clone(),
            group: self.group.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    /// History-stripped twins, present when requested.
    pub ablation: Option<Vec<DatasetRecord>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Extracts and renders every trajectory against its pool (`pools[i]`
/// belongs to `trajectories[i]`).
pub fn build_dataset(
    trajectories: &[Trajectory],
    pools: &[CandidatePool],
    ablation: bool,
) -> Result<Dataset, SupervisionError> {
    if pools.len() != trajectories.len() {
        return Err(SupervisionError::PoolCount {
            expected: trajectories.len(),
            found: pools.len(),
        });
    }
    let per_trajectory: Vec<(Vec<DatasetRecord>, Vec<DatasetRecord>)> = trajectories
        .par_iter()
        .zip(pools.par_iter())
        .map(|(t, pool)| {
            let instances = extract_instances(t, pool)?;
            let mut records = Vec::with_capacity(instances.len());
            let mut twins = Vec::new();
            for inst in &instances {
                records.push(DatasetRecord::from_instance(inst)?);
                if ablation {
                    twins.push(DatasetRecord::from_instance(&strip_history(inst))?);
                }
            }
            Ok((records, twins))
        })
        .collect::<Result<_, SupervisionError>>()?;
    let mut dataset = Dataset {
        records: Vec::new(),
        ablation: ablation.then(Vec::new),
    };
    for (records, twins) in per_trajectory {
        dataset.records.extend(records);
        if let Some(a) = dataset.ablation.as_mut() {
            a.extend(twins);
        }
    }
    Ok(dataset)
}

pub fn render_records(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.to_value()).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_records(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<(), SupervisionError> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(render_records(records).as_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<DatasetRecord>, SupervisionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| SupervisionError::Parse { line: i + 1, message };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        out.push(DatasetRecord::from_value(&value).map_err(parse_err)?);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, SupervisionError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut text = String::new();
    for line in file.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_records(&text)
}
