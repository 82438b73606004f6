//! Self-evolutionary expansion of the candidate graph.
//!
//! Each round samples an existing candidate and a typed mutation operator,
//! asks the model for a new related candidate, validates it and inserts it
//! into the graph with a mutation edge back to its parent.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::graph::{embed_specs, CandidateGraph, GraphError};
use crate::prompts;
use crate::registry::{validate_spec, CandidateKind, CandidateSpec, Provenance, ValidationError};
use crate::util::{derive_seed, strip_code_fence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOperator {
    UsageExtension,
    FunctionEnhancement,
    WorkflowChain,
    HelperTool,
    ParameterRedesign,
    DomainTransfer,
    CapabilityEnhancement,
    WorkflowSpecialization,
    ToolComposition,
    ScenarioAdaptation,
}

pub const TOOL_OPERATORS: [MutationOperator; 5] = [
    MutationOperator::UsageExtension,
    MutationOperator::FunctionEnhancement,
    MutationOperator::WorkflowChain,
    MutationOperator::HelperTool,
    MutationOperator::ParameterRedesign,
];

pub const AGENT_OPERATORS: [MutationOperator; 5] = [
    MutationOperator::DomainTransfer,
    MutationOperator::CapabilityEnhancement,
    MutationOperator::WorkflowSpecialization,
    MutationOperator::ToolComposition,
    MutationOperator::ScenarioAdaptation,
];

impl MutationOperator {
    pub fn for_kind(kind: CandidateKind) -> &'static [MutationOperator] {
        match kind {
            CandidateKind::Tool => &TOOL_OPERATORS,
            CandidateKind::Agent => &AGENT_OPERATORS,
        }
    }

    pub fn kind(self) -> CandidateKind {
        if TOOL_OPERATORS.contains(&self) {
            CandidateKind::Tool
        } else {
            CandidateKind::Agent
        }
    }

    pub fn display_name(self) -> &'static str {
        use MutationOperator::*;
        match self {
            UsageExtension => "Usage Extension",
            FunctionEnhancement => "Function Enhancement",
            WorkflowChain => "Workflow Chain",
            HelperTool => "Helper Tool",
            ParameterRedesign => "Parameter Redesign",
            DomainTransfer => "Domain Transfer",
            CapabilityEnhancement => "Capability Enhancement",
            WorkflowSpecialization => "Workflow Specialization",
            ToolComposition => "Tool Composition",
            ScenarioAdaptation => "Scenario Adaptation",
        }
    }

    pub fn from_display_name(name: &str) -> Option<Self> {
        TOOL_OPERATORS
            .iter()
            .chain(AGENT_OPERATORS.iter())
            .copied()
            .find(|op| op.display_name() == name)
    }

    /// Strategy description inserted into the mutation prompt.
    pub fn description(self) -> &'static str {
        use MutationOperator::*;
        match self {
            UsageExtension => "Apply the tool's core logic to related new scenarios or domains. Example: analyze_code_quality -> analyze_document_quality (applies code analysis concepts to documents).",
            FunctionEnhancement => "Substantially expand the tool's capabilities to enable entirely new use cases while maintaining the core purpose (add 2+ major user-visible features). Example: compress_image -> image_optimization_suite (adds format conversion + batch processing + quality presets + metadata editing).",
            WorkflowChain => "Create a tool that works immediately before or after the original tool in a workflow, providing better inputs or processing outputs. Example: search_web -> prepare_search_keywords (pre-processes queries) or summarize_search_results (post-processes results).",
            HelperTool => "Create an independent supporting tool that enhances the ecosystem around the original tool. Example: create_chart -> validate_chart_data (checks data format before charting) or suggest_chart_colors (recommends color schemes).",
            ParameterRedesign => "Modify the tool's parameter structure to enable different input patterns or interaction approaches. Focus on meaningful parameter changes that shift how users provide data or configure behavior. Example: get_user(user_id: string) -> query_users(filters: object, sort: string, limit: number) (from single lookup to flexible querying).",
            DomainTransfer => "Apply the agent's architecture and workflow to a different but related domain. Example: SWE_agent -> doc_review_agent (adapts the edit/search/validate pattern from code to documents).",
            CapabilityEnhancement => "Substantially expand the agent's capabilities by adding new tools and extending its scope. Example: code_search_agent -> code_intelligence_agent (adds semantic analysis, dependency tracking, and refactoring suggestions).",
            WorkflowSpecialization => "Create a more focused agent that specializes in a subset of the original agent's workflow. Example: full_stack_dev_agent -> api_testing_agent (focuses exclusively on API testing with specialized validation tools).",
            ToolComposition => "Recombine and restructure the agent's tools to create new workflow patterns. Example: data_pipeline_agent -> realtime_streaming_agent (reorganizes batch processing tools into streaming-compatible tools).",
            ScenarioAdaptation => "Adapt the agent to handle different use case scenarios or user contexts. Example: general_qa_agent -> customer_support_agent (adapts general QA capabilities specifically for customer service scenarios).",
        }
    }
}

impl fmt::Display for MutationOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Error)]
pub enum MutationError {
    #[error("graph has no candidates to mutate")]
    EmptyGraph,
    #[error("operator {op} cannot mutate a {kind}")]
    FamilyMismatch { op: MutationOperator, kind: CandidateKind },
    #[error("response is not parseable JSON: {0}")]
    NotParseable(String),
    #[error("mutant failed validation: {0}")]
    Validation(#[from] ValidationError),
    #[error("mutant reuses its parent's name `{0}`")]
    NameEqualsParent(String),
    #[error("tool mutant changed tags from {expected:?} to {found:?}")]
    TagMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("mutant `{0}` collides with an existing candidate")]
    NameTaken(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub round: usize,
    pub parent: String,
    pub operator: MutationOperator,
    pub attempts: u32,
    pub raw_response: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

/// Samples a parent uniformly over the graph's nodes and an operator
/// uniformly over that kind's operators.
pub fn pick_mutation(graph: &CandidateGraph, rng_seed: u64) -> Result<(String, MutationOperator), MutationError> {
    pick_weighted(graph, rng_seed, None)
}

fn pick_weighted(
    graph: &CandidateGraph,
    rng_seed: u64,
    weights: Option<&WeightedIndex<f64>>,
) -> Result<(String, MutationOperator), MutationError> {
    if graph.is_empty() {
        return Err(MutationError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let node = &graph.names()[rng.random_range(0..graph.node_count())];
    let ops = MutationOperator::for_kind(graph.kind());
    let op = match weights {
        Some(w) => ops[w.sample(&mut rng)],
        None => ops[rng.random_range(0..ops.len())],
    };
    Ok((node.clone(), op))
}

fn pretty(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("json values serialize")
}

pub fn render_mutation_prompt(
    base: &CandidateSpec,
    op: MutationOperator,
    model_id: &str,
    temperature: f64,
) -> Result<ChatRequest, MutationError> {
    if op.kind() != base.kind() {
        return Err(MutationError::FamilyMismatch { op, kind: base.kind() });
    }
    let prompt = match base {
        CandidateSpec::Tool(tool) => {
            let mut doc = base.profile_document();
            doc["tags"] = serde_json::json!(tool.tags);
            let tags = serde_json::to_string(&tool.tags).expect("strings serialize");
            prompts::tool_mutation_prompt(&pretty(&doc), op.display_name(), op.description(), &tags)
        }
        CandidateSpec::Agent(agent) => prompts::agent_mutation_prompt(
            &agent.name,
            &agent.description,
            &pretty(&serde_json::json!(agent.tools)),
            &pretty(&agent.input_schema.to_value()),
            op.display_name(),
            op.description(),
        ),
    };
    Ok(ChatRequest::new(model_id, vec![ChatMessage::user(prompt)]).with_temperature(temperature))
}

/// Parses a model response into a validated mutant of `base`.
pub fn parse_mutant(
    response: &str,
    kind: CandidateKind,
    base: &CandidateSpec,
    op: MutationOperator,
) -> Result<CandidateSpec, MutationError> {
    let body = strip_code_fence(response);
    let mut doc: Value = serde_json::from_str(body).map_err(|e| MutationError::NotParseable(e.to_string()))?;
    if let Some(obj) = doc.as_object_mut() {
        obj.remove("provenance");
    }
    let mut spec = validate_spec(&doc, kind)?;
    if spec.name() == base.name() {
        return Err(MutationError::NameEqualsParent(base.name().to_string()));
    }
    if kind == CandidateKind::Tool && spec.tags() != base.tags() {
        return Err(MutationError::TagMismatch {
            expected: base.tags().to_vec(),
            found: spec.tags().to_vec(),
        });
    }
    spec.set_provenance(Provenance::mutant(base.name(), op));
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    pub max_retries: u32,
    pub seed: u64,
    pub model_id: String,
    pub temperature: f64,
    /// Relative operator weights, in [`MutationOperator::for_kind`] order.
    pub operator_weights: Option<Vec<f64>>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            seed: 0,
            model_id: "mock".into(),
            temperature: 0.7,
            operator_weights: None,
        }
    }
}

#[derive(Debug)]
pub struct EvolveOutcome {
    pub graph: CandidateGraph,
    pub records: Vec<MutationRecord>,
    /// Set when a gateway failure cut the run short; `graph` and `records`
    /// then hold everything committed before the failure.
    pub error: Option<GatewayError>,
}

impl EvolveOutcome {
    pub fn accepted(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }
}

/// Runs `rounds` rounds of pick, prompt, parse and insert.
pub fn evolve(
    graph: &CandidateGraph,
    rounds: usize,
    config: &EvolveConfig,
    gateway: &Gateway,
) -> Result<EvolveOutcome, MutationError> {
    let weights = match &config.operator_weights {
        Some(w) => Some(
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| MutationError::NotParseable(format!("operator weights: {e}")))?,
        ),
        None => None,
    };
    let mut graph = graph.clone();
    let mut records = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let (parent, op) = pick_weighted(
            &graph,
            derive_seed(config.seed, &format!("evolve/{round}")),
            weights.as_ref(),
        )?;
        let base = graph.spec(&parent).expect("picked node exists").clone();
        let mut request = render_mutation_prompt(&base, op, &config.model_id, config.temperature)?;
        let mut record = MutationRecord {
            round,
            parent: parent.clone(),
            operator: op,
            attempts: 0,
            raw_response: String::new(),
            accepted: false,
            mutant: None,
            reject_reason: None,
        };
        for _ in 0..=config.max_retries {
            record.attempts += 1;
            let raw = match gateway.chat(&request) {
                Ok(raw) => raw,
                Err(e) => {
                    record.reject_reason = Some(e.to_string());
                    records.push(record);
                    return Ok(EvolveOutcome {
                        graph,
                        records,
                        error: Some(e),
                    });
                }
            };
            record.raw_response = raw.clone();
            let attempt = parse_mutant(&raw, graph.kind(), &base, op).and_then(|mutant| {
                if graph.contains(mutant.name()) {
                    return Err(MutationError::NameTaken(mutant.name().to_string()));
                }
                Ok(mutant)
            });
            match attempt {
                Ok(mutant) => {
                    let embedding = match embed_specs([&mutant], gateway) {
                        Ok(mut v) => v.pop().expect("one embedding"),
                        Err(GraphError::Gateway(e)) => {
                            record.reject_reason = Some(e.to_string());
                            records.push(record);
                            return Ok(EvolveOutcome {
                                graph,
                                records,
                                error: Some(e),
                            });
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let name = mutant.name().to_string();
                    graph.add_mutant(&parent, mutant, embedding)?;
                    record.accepted = true;
                    record.mutant = Some(name);
                    record.reject_reason = None;
                    break;
                }
                Err(e) => {
                    record.reject_reason = Some(e.to_string());
                    request.messages.push(ChatMessage::assistant(raw));
                    request.messages.push(ChatMessage::user(format!(
                        "The previous response was rejected: {e}. Return a corrected JSON object only."
                    )));
                }
            }
        }
        records.push(record);
    }
    Ok(EvolveOutcome {
        graph,
        records,
        error: None,
    })
}

pub fn write_mutation_log(records: &[MutationRecord], path: impl AsRef<Path>) -> io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    for r in records {
        writeln!(file, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
    }
    Ok(())
}
