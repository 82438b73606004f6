//! Tool and agent candidate specifications, candidate banks and pools.
//!
//! Documents follow the exchange layout used by MCP tool listings:
//! `name`, `description`, `inputSchema`, `tags`, plus `tools` for agents.
//! Mutants additionally carry a `provenance` object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::eval::PoolSetting;
use crate::mutation::MutationOperator;

pub const AGENT_SUFFIX: &str = "_agent";
pub const MAX_AGENT_TOOLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Tool,
    Agent,
}

impl CandidateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateKind::Tool => "tool",
            CandidateKind::Agent => "agent",
        }
    }
}

impl fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CandidateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tool" => Ok(CandidateKind::Tool),
            "agent" => Ok(CandidateKind::Agent),
            other => Err(format!("unknown candidate kind `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("agent name `{0}` must end with \"_agent\"")]
    BadAgentName(String),
    #[error("malformed schema at `{0}`")]
    SchemaMalformed(String),
    #[error("duplicate tool entry `{0}`")]
    DuplicateToolEntry(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("candidate `{0}` already exists")]
    DuplicateName(String),
    #[error("expected a {expected} candidate, found a {found}")]
    KindMismatch {
        expected: CandidateKind,
        found: CandidateKind,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ValidationError {
    ValidationError::InvalidField {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid candidate `{name}`: {source}")]
    Validation {
        name: String,
        #[source]
        source: ValidationError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Mutant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub origin: Origin,
    pub parent_name: Option<String>,
    pub operator: Option<MutationOperator>,
}

impl Provenance {
    pub fn seed() -> Self {
        Self {
            origin: Origin::Seed,
            parent_name: None,
            operator: None,
        }
    }

    pub fn mutant(parent: impl Into<String>, operator: MutationOperator) -> Self {
        Self {
            origin: Origin::Mutant,
            parent_name: Some(parent.into()),
            operator: Some(operator),
        }
    }

    pub fn is_mutant(&self) -> bool {
        self.origin == Origin::Mutant
    }
}

/// An object-typed JSON schema describing a candidate's input parameters.
///
/// Property order follows the source document; canonical orderings are
/// applied where needed (see [`serialize_phi`]).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputSchema {
    pub properties: Map<String, Value>,
    pub required: Option<Vec<String>>,
    pub extra: Map<String, Value>,
}

impl InputSchema {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn required_names(&self) -> &[String] {
        self.required.as_deref().unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    /// Declared JSON type of a property, if any.
    pub fn property_type(&self, name: &str) -> Option<&Value> {
        self.properties.get(name).and_then(|p| p.get("type"))
    }

    /// Checks call arguments against the schema: an object carrying every
    /// required property, with declared types matching where present.
    pub fn check_arguments(&self, arguments: &Value) -> Result<(), String> {
        let args = arguments
            .as_object()
            .ok_or_else(|| "arguments are not an object".to_string())?;
        for name in self.required_names() {
            if !args.contains_key(name) {
                return Err(format!("missing required argument `{name}`"));
            }
        }
        for (name, value) in args {
            let Some(declared) = self.property_type(name) else {
                continue;
            };
            let accepted: Vec<&str> = match declared {
                Value::String(t) => vec![t.as_str()],
                Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
                _ => continue,
            };
            if !accepted.iter().any(|t| json_type_matches(t, value)) {
                return Err(format!("argument `{name}` is not of type {declared}"));
            }
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        let mut out = Map::new();
        out.insert("type".into(), Value::String("object".into()));
        out.insert("properties".into(), Value::Object(self.properties.clone()));
        if let Some(required) = &self.required {
            out.insert("required".into(), json!(required));
        }
        for (k, v) in &self.extra {
            out.insert(k.clone(), v.clone());
        }
        Value::Object(out)
    }

    pub fn from_value(value: &Value, path: &str) -> Result<Self, ValidationError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ValidationError::SchemaMalformed(path.to_string()))?;
        match obj.get("type") {
            Some(Value::String(t)) if t == "object" => {}
            _ => return Err(ValidationError::SchemaMalformed(format!("{path}.type"))),
        }
        let properties = match obj.get("properties") {
            None => Map::new(),
            Some(Value::Object(props)) => {
                for (name, prop) in props {
                    let prop_path = format!("{path}.properties.{name}");
                    let prop = prop
                        .as_object()
                        .ok_or_else(|| ValidationError::SchemaMalformed(prop_path.clone()))?;
                    match prop.get("type") {
                        None | Some(Value::String(_)) => {}
                        Some(Value::Array(types)) if types.iter().all(Value::is_string) => {}
                        Some(_) => return Err(ValidationError::SchemaMalformed(format!("{prop_path}.type"))),
                    }
                }
                props.clone()
            }
            Some(_) => return Err(ValidationError::SchemaMalformed(format!("{path}.properties"))),
        };
        let required = match obj.get("required") {
            None => None,
            Some(Value::Array(items)) => {
                let mut names = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item.as_str() {
                        Some(name) if properties.contains_key(name) => names.push(name.to_string()),
                        _ => return Err(ValidationError::SchemaMalformed(format!("{path}.required[{i}]"))),
                    }
                }
                Some(names)
            }
            Some(_) => return Err(ValidationError::SchemaMalformed(format!("{path}.required"))),
        };
        let extra = obj
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "type" | "properties" | "required"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self {
            properties,
            required,
            extra,
        })
    }
}

fn json_type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "string" => value.is_string(),
        "integer" => value.is_i64() || value.is_u64(),
        "number" => value.is_number(),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        "null" => value.is_null(),
        _ => true,
    }
}

/// Read access to candidate specs by name.
pub trait SpecLookup {
    fn kind(&self) -> CandidateKind;
    fn lookup(&self, name: &str) -> Option<&CandidateSpec>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: InputSchema,
    pub tags: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub name: String,
    pub description: String,
    pub tools: Vec<String>,
    pub input_schema: InputSchema,
    pub tags: Vec<String>,
    pub provenance: Provenance,
}

/// A routable unit: either a tool or an agent.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSpec {
    Tool(ToolSpec),
    Agent(AgentSpec),
}

impl CandidateSpec {
    pub fn kind(&self) -> CandidateKind {
        match self {
            CandidateSpec::Tool(_) => CandidateKind::Tool,
            CandidateSpec::Agent(_) => CandidateKind::Agent,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            CandidateSpec::Tool(t) => &t.name,
            CandidateSpec::Agent(a) => &a.name,
        }
    }

    pub fn description(&self) -> &str {
        match self {
            CandidateSpec::Tool(t) => &t.description,
            CandidateSpec::Agent(a) => &a.description,
        }
    }

    pub fn input_schema(&self) -> &InputSchema {
        match self {
            CandidateSpec::Tool(t) => &t.input_schema,
            CandidateSpec::Agent(a) => &a.input_schema,
        }
    }

    pub fn tags(&self) -> &[String] {
        match self {
            CandidateSpec::Tool(t) => &t.tags,
            CandidateSpec::Agent(a) => &a.tags,
        }
    }

    pub fn tools(&self) -> &[String] {
        match self {
            CandidateSpec::Tool(_) => &[],
            CandidateSpec::Agent(a) => &a.tools,
        }
    }

    pub fn provenance(&self) -> &Provenance {
        match self {
            CandidateSpec::Tool(t) => &t.provenance,
            CandidateSpec::Agent(a) => &a.provenance,
        }
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        match self {
            CandidateSpec::Tool(t) => t.provenance = provenance,
            CandidateSpec::Agent(a) => a.provenance = provenance,
        }
    }

    /// The exchange document, including provenance for mutants.
    pub fn to_document(&self) -> Value {
        let mut doc = self.profile_document();
        if let Value::Object(obj) = &mut doc {
            obj.insert("tags".into(), json!(self.tags()));
            let prov = self.provenance();
            if prov.is_mutant() {
                obj.insert(
                    "provenance".into(),
                    json!({
                        "origin": "mutant",
                        "parent": prov.parent_name,
                        "operator": prov.operator,
                    }),
                );
            }
        }
        doc
    }

    /// Name, description, tools (agents) and schema; the block shown to routers.
    pub fn profile_document(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name().to_string()));
        obj.insert("description".into(), Value::String(self.description().to_string()));
        if let CandidateSpec::Agent(a) = self {
            obj.insert("tools".into(), json!(a.tools));
        }
        obj.insert("inputSchema".into(), self.input_schema().to_value());
        Value::Object(obj)
    }
}

fn take_string(obj: &Map<String, Value>, field: &str) -> Result<String, ValidationError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ValidationError::MissingField(field.to_string())),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(invalid(field, "expected a string")),
    }
}

fn take_string_list(obj: &Map<String, Value>, field: &str) -> Result<Option<Vec<String>>, ValidationError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| invalid(field, "expected a list of strings"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(invalid(field, "expected a list of strings")),
    }
}

fn parse_provenance(obj: &Map<String, Value>, kind: CandidateKind) -> Result<Provenance, ValidationError> {
    let Some(raw) = obj.get("provenance") else {
        return Ok(Provenance::seed());
    };
    let prov = raw
        .as_object()
        .ok_or_else(|| invalid("provenance", "expected an object"))?;
    match prov.get("origin").and_then(Value::as_str) {
        Some("seed") => {
            if prov.get("parent").is_some_and(|v| !v.is_null()) || prov.get("operator").is_some_and(|v| !v.is_null()) {
                return Err(invalid("provenance", "seeds carry no parent or operator"));
            }
            Ok(Provenance::seed())
        }
        Some("mutant") => {
            let parent = prov
                .get("parent")
                .and_then(Value::as_str)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| invalid("provenance.parent", "mutants need a parent"))?;
            let operator: MutationOperator = prov
                .get("operator")
                .cloned()
                .ok_or_else(|| invalid("provenance.operator", "mutants need an operator"))
                .and_then(|v| serde_json::from_value(v).map_err(|e| invalid("provenance.operator", e.to_string())))?;
            if operator.kind() != kind {
                return Err(invalid(
                    "provenance.operator",
                    format!("{operator} is not a {kind} operator"),
                ));
            }
            Ok(Provenance::mutant(parent, operator))
        }
        _ => Err(invalid("provenance.origin", "expected \"seed\" or \"mutant\"")),
    }
}

/// Validates an exchange document and turns it into a spec of the given kind.
pub fn validate_spec(document: &Value, kind: CandidateKind) -> Result<CandidateSpec, ValidationError> {
    let obj = document
        .as_object()
        .ok_or_else(|| ValidationError::SchemaMalformed("$".into()))?;
    let name = take_string(obj, "name")?;
    if name.trim().is_empty() {
        return Err(invalid("name", "must not be empty"));
    }
    let description = take_string(obj, "description")?;
    let schema_doc = obj
        .get("inputSchema")
        .ok_or_else(|| ValidationError::MissingField("inputSchema".into()))?;
    let input_schema = InputSchema::from_value(schema_doc, "inputSchema")?;
    let tags = take_string_list(obj, "tags")?;
    let provenance = parse_provenance(obj, kind)?;

    match kind {
        CandidateKind::Tool => Ok(CandidateSpec::Tool(ToolSpec {
            name,
            description,
            input_schema,
            tags: tags.unwrap_or_default(),
            provenance,
        })),
        CandidateKind::Agent => {
            if !name.ends_with(AGENT_SUFFIX) {
                return Err(ValidationError::BadAgentName(name));
            }
            let tools = take_string_list(obj, "tools")?.ok_or_else(|| ValidationError::MissingField("tools".into()))?;
            if tools.is_empty() || tools.len() > MAX_AGENT_TOOLS {
                return Err(invalid(
                    "tools",
                    format!("expected 1 to {MAX_AGENT_TOOLS} entries, found {}", tools.len()),
                ));
            }
            let mut seen = BTreeSet::new();
            for tool in &tools {
                if !seen.insert(tool.as_str()) {
                    return Err(ValidationError::DuplicateToolEntry(tool.clone()));
                }
            }
            for (prop, body) in &input_schema.properties {
                if !body.get("description").is_some_and(Value::is_string) {
                    return Err(ValidationError::SchemaMalformed(format!(
                        "inputSchema.properties.{prop}.description"
                    )));
                }
            }
            let tags = tags.ok_or_else(|| ValidationError::MissingField("tags".into()))?;
            if tags.is_empty() {
                return Err(invalid("tags", "agents need at least one tag"));
            }
            Ok(CandidateSpec::Agent(AgentSpec {
                name,
                description,
                tools,
                input_schema,
                tags,
                provenance,
            }))
        }
    }
}

/// Guesses the kind of an exchange document: agents list their tools.
pub fn infer_kind(document: &Value) -> CandidateKind {
    if document.get("tools").is_some() {
        CandidateKind::Agent
    } else {
        CandidateKind::Tool
    }
}

fn type_label(prop: &Value) -> String {
    match prop.get("type") {
        Some(Value::String(t)) => t.clone(),
        Some(Value::Array(ts)) => ts.iter().filter_map(Value::as_str).collect::<Vec<_>>().join("|"),
        _ => "any".into(),
    }
}

fn flatten_properties(properties: &Map<String, Value>, required: &[String], prefix: &str, out: &mut Vec<String>) {
    let mut names: Vec<&String> = properties.keys().collect();
    names.sort();
    for name in names {
        let prop = &properties[name];
        let path = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}.{name}")
        };
        let mut line = format!("- {path} ({}", type_label(prop));
        if required.iter().any(|r| r == name) {
            line.push_str(", required");
        }
        line.push(')');
        if let Some(desc) = prop.get("description").and_then(Value::as_str) {
            line.push_str(": ");
            line.push_str(desc);
        }
        out.push(line);
        if let Some(Value::Object(nested)) = prop.get("properties") {
            let nested_required: Vec<String> = prop
                .get("required")
                .and_then(Value::as_array)
                .map(|r| r.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
                .unwrap_or_default();
            flatten_properties(nested, &nested_required, &path, out);
        }
    }
}

/// Canonical text of a candidate used as embedding input.
///
/// Lines: name, description, parameters (flattened, lexicographic by path),
/// then the tool list for agents. Empty sections are omitted.
pub fn serialize_phi(spec: &CandidateSpec) -> String {
    let mut lines = vec![
        format!("name: {}", spec.name()),
        format!("description: {}", spec.description()),
    ];
    let schema = spec.input_schema();
    if !schema.properties.is_empty() {
        lines.push("parameters:".into());
        flatten_properties(&schema.properties, schema.required_names(), "", &mut lines);
    }
    if let CandidateSpec::Agent(agent) = spec {
        lines.push(format!("tools: {}", agent.tools.join(", ")));
    }
    lines.join("\n")
}

/// An ordered set of candidates of a single kind with unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBank {
    kind: CandidateKind,
    entries: Vec<CandidateSpec>,
    index: BTreeMap<String, usize>,
}

impl SpecLookup for CandidateBank {
    fn kind(&self) -> CandidateKind {
        self.kind
    }

    fn lookup(&self, name: &str) -> Option<&CandidateSpec> {
        self.get(name)
    }
}

impl CandidateBank {
    pub fn new(kind: CandidateKind) -> Self {
        Self {
            kind,
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn from_specs(
        kind: CandidateKind,
        specs: impl IntoIterator<Item = CandidateSpec>,
    ) -> Result<Self, ValidationError> {
        let mut bank = Self::new(kind);
        for spec in specs {
            bank.insert(spec)?;
        }
        Ok(bank)
    }

    pub fn kind(&self) -> CandidateKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CandidateSpec] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&CandidateSpec> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(CandidateSpec::name)
    }

    /// Appends a spec; duplicates are rejected, never renamed.
    pub fn insert(&mut self, spec: CandidateSpec) -> Result<(), ValidationError> {
        if spec.kind() != self.kind {
            return Err(ValidationError::KindMismatch {
                expected: self.kind,
                found: spec.kind(),
            });
        }
        if self.index.contains_key(spec.name()) {
            return Err(ValidationError::DuplicateName(spec.name().to_string()));
        }
        self.index.insert(spec.name().to_string(), self.entries.len());
        self.entries.push(spec);
        Ok(())
    }

    /// New snapshot with `spec` appended.
    pub fn with_entry(&self, spec: CandidateSpec) -> Result<Self, ValidationError> {
        let mut next = self.clone();
        next.insert(spec)?;
        Ok(next)
    }

    /// Union with another bank; entries with the same name must be identical.
    pub fn merged(&self, other: &CandidateBank) -> Result<Self, ValidationError> {
        let mut out = self.clone();
        for spec in other.entries() {
            match out.get(spec.name()) {
                Some(existing) if existing == spec => {}
                Some(_) => return Err(ValidationError::DuplicateName(spec.name().to_string())),
                None => out.insert(spec.clone())?,
            }
        }
        Ok(out)
    }
}

/// Parses bank text: a JSON array of documents, or one document per line.
pub fn parse_bank(text: &str) -> Result<CandidateBank, BankError> {
    let docs: Vec<(usize, Value)> = if text.trim_start().starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(text).map_err(|e| BankError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        values.into_iter().map(|v| (1, v)).collect()
    } else {
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(line).map_err(|e| BankError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            docs.push((i + 1, value));
        }
        docs
    };

    let kind = docs.first().map(|(_, d)| infer_kind(d)).unwrap_or(CandidateKind::Tool);
    let mut bank = CandidateBank::new(kind);
    for (line, doc) in docs {
        let name = doc
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("<line {line}>"));
        let found = infer_kind(&doc);
        let spec = if found != kind {
            Err(ValidationError::KindMismatch { expected: kind, found })
        } else {
            validate_spec(&doc, kind)
        };
        spec.and_then(|s| bank.insert(s))
            .map_err(|source| BankError::Validation { name, source })?;
    }
    Ok(bank)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<CandidateBank, BankError> {
    let text = fs::read_to_string(path)?;
    parse_bank(&text)
}

/// Renders a bank as one compact document per line.
pub fn render_bank(bank: &CandidateBank) -> String {
    let mut out = String::new();
    for spec in bank.entries() {
        out.push_str(&spec.to_document().to_string());
        out.push('\n');
    }
    out
}

pub fn save_bank(bank: &CandidateBank, path: impl AsRef<Path>) -> Result<(), BankError> {
    let mut file = fs::File::create(path)?;
    file.write_all(render_bank(bank).as_bytes())?;
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("candidate pool is empty")]
    Empty,
    #[error("pool member `{0}` is not in the bank")]
    UnknownMember(String),
}

/// The subset of a bank offered at one routing step.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    bank: Arc<CandidateBank>,
    members: Vec<String>,
    non_callable: BTreeSet<String>,
    pub setting: PoolSetting,
}

impl SpecLookup for CandidatePool {
    fn kind(&self) -> CandidateKind {
        self.bank.kind()
    }

    fn lookup(&self, name: &str) -> Option<&CandidateSpec> {
        self.spec(name)
    }
}

impl CandidatePool {
    pub fn new(
        bank: Arc<CandidateBank>,
        members: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, PoolError> {
        let mut seen = BTreeSet::new();
        let mut ordered = Vec::new();
        for m in members {
            let m = m.into();
            if !bank.contains(&m) {
                return Err(PoolError::UnknownMember(m));
            }
            if seen.insert(m.clone()) {
                ordered.push(m);
            }
        }
        if ordered.is_empty() {
            return Err(PoolError::Empty);
        }
        Ok(Self {
            bank,
            members: ordered,
            non_callable: BTreeSet::new(),
            setting: PoolSetting::Clean,
        })
    }

    /// A pool offering every candidate in the bank.
    pub fn whole_bank(bank: Arc<CandidateBank>) -> Result<Self, PoolError> {
        let names: Vec<String> = bank.names().map(str::to_string).collect();
        Self::new(bank, names)
    }

    pub fn bank(&self) -> &Arc<CandidateBank> {
        &self.bank
    }

    pub fn kind(&self) -> CandidateKind {
        self.bank.kind()
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.members.iter().any(|m| m == name)
    }

    pub fn spec(&self, name: &str) -> Option<&CandidateSpec> {
        if self.contains(name) {
            self.bank.get(name)
        } else {
            None
        }
    }

    pub fn specs(&self) -> impl Iterator<Item = &CandidateSpec> {
        self.members.iter().filter_map(|m| self.bank.get(m))
    }

    pub fn is_callable(&self, name: &str) -> bool {
        self.contains(name) && !self.non_callable.contains(name)
    }

    pub fn non_callable(&self) -> &BTreeSet<String> {
        &self.non_callable
    }

    /// Extends the pool with further members drawn from `bank`.
    pub(crate) fn extended(
        &self,
        bank: Arc<CandidateBank>,
        extra: impl IntoIterator<Item = String>,
        non_callable: bool,
        setting: PoolSetting,
    ) -> Result<Self, PoolError> {
        let mut members = self.members.clone();
        let mut marked = self.non_callable.clone();
        let mut seen: BTreeSet<String> = members.iter().cloned().collect();
        for m in extra {
            if !bank.contains(&m) {
                return Err(PoolError::UnknownMember(m));
            }
            if seen.insert(m.clone()) {
                if non_callable {
                    marked.insert(m.clone());
                }
                members.push(m);
            }
        }
        for m in &members {
            if !bank.contains(m) {
                return Err(PoolError::UnknownMember(m.clone()));
            }
        }
        Ok(Self {
            bank,
            members,
            non_callable: marked,
            setting,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_tool_is_valid() {
        let doc =
            json!({"name":"get_user","description":"d","inputSchema":{"type":"object","properties":{}},"tags":[]});
        let spec = validate_spec(&doc, CandidateKind::Tool).unwrap();
        assert_eq!(spec.name(), "get_user");
        assert_eq!(spec.kind(), CandidateKind::Tool);
        assert!(spec.tags().is_empty());
        assert!(!spec.provenance().is_mutant());
    }

    #[test]
    fn argument_checks() {
        let schema = InputSchema::from_value(
            &json!({"type":"object","properties":{"id":{"type":"string"},"n":{"type":["integer","null"]}},"required":["id"]}),
            "inputSchema",
        )
        .unwrap();
        assert!(schema.check_arguments(&json!({"id": "x"})).is_ok());
        assert!(schema
            .check_arguments(&json!({"id": "x", "n": null, "other": 1}))
            .is_ok());
        assert!(schema.check_arguments(&json!({"n": 3})).unwrap_err().contains("`id`"));
        assert!(schema.check_arguments(&json!({"id": 5})).is_err());
        assert!(schema.check_arguments(&json!({"id": "x", "n": 1.5})).is_err());
        assert!(schema.check_arguments(&json!([])).is_err());
    }

    #[test]
    fn absent_tags_normalize_to_empty() {
        let doc = json!({"name":"t","description":"d","inputSchema":{"type":"object"}});
        let spec = validate_spec(&doc, CandidateKind::Tool).unwrap();
        assert!(spec.tags().is_empty());
    }

    #[test]
    fn swe_agent_is_valid() {
        let spec = validate_spec(&swe_agent_document(), CandidateKind::Agent).unwrap();
        assert_eq!(spec.tools().len(), 9);
        assert_eq!(spec.tags(), ["General".to_string()]);
    }

    #[test]
    fn agent_name_needs_suffix() {
        let mut doc = swe_agent_document();
        doc["name"] = json!("swe_helper");
        assert_eq!(
            validate_spec(&doc, CandidateKind::Agent),
            Err(ValidationError::BadAgentName("swe_helper".into()))
        );
    }

    #[test]
    fn agent_rejects_duplicate_tools_and_bad_counts() {
        let mut doc = swe_agent_document();
        doc["tools"] = json!(["a", "b", "a"]);
        assert_eq!(
            validate_spec(&doc, CandidateKind::Agent),
            Err(ValidationError::DuplicateToolEntry("a".into()))
        );
        doc["tools"] = json!([]);
        assert!(matches!(
            validate_spec(&doc, CandidateKind::Agent),
            Err(ValidationError::InvalidField { .. })
        ));
        let many: Vec<String> = (0..17).map(|i| format!("t{i}")).collect();
        doc["tools"] = json!(many);
        assert!(validate_spec(&doc, CandidateKind::Agent).is_err());
    }

    #[test]
    fn agent_properties_need_descriptions() {
        let mut doc = swe_agent_document();
        doc["inputSchema"]["properties"]["model"] = json!({"type": "string"});
        assert_eq!(
            validate_spec(&doc, CandidateKind::Agent),
            Err(ValidationError::SchemaMalformed(
                "inputSchema.properties.model.description".into()
            ))
        );
    }

    #[test]
    fn agent_tags_required() {
        let mut doc = swe_agent_document();
        doc.as_object_mut().unwrap().remove("tags");
        assert_eq!(
            validate_spec(&doc, CandidateKind::Agent),
            Err(ValidationError::MissingField("tags".into()))
        );
    }

    #[test]
    fn missing_fields_and_bad_schema() {
        let doc = json!({"description":"d","inputSchema":{"type":"object"}});
        assert_eq!(
            validate_spec(&doc, CandidateKind::Tool),
            Err(ValidationError::MissingField("name".into()))
        );
        let doc = json!({"name":"x","description":"d","inputSchema":{"type":"string"}});
        assert_eq!(
            validate_spec(&doc, CandidateKind::Tool),
            Err(ValidationError::SchemaMalformed("inputSchema.type".into()))
        );
        let doc = json!({"name":"x","description":"d","inputSchema":{"type":"object","properties":{"a":{"type":"string"}},"required":["b"]}});
        assert_eq!(
            validate_spec(&doc, CandidateKind::Tool),
            Err(ValidationError::SchemaMalformed("inputSchema.required[0]".into()))
        );
    }

    #[test]
    fn mutant_provenance_round_trips() {
        let mut spec = tool("a", "d", &[("x", "string")]);
        spec.set_provenance(Provenance::mutant("p", MutationOperator::HelperTool));
        let back = validate_spec(&spec.to_document(), CandidateKind::Tool).unwrap();
        assert_eq!(back, spec);

        let mut doc = spec.to_document();
        doc["provenance"]["operator"] = json!("domain_transfer");
        assert!(validate_spec(&doc, CandidateKind::Tool).is_err());
        doc["provenance"] = json!({"origin": "mutant"});
        assert!(validate_spec(&doc, CandidateKind::Tool).is_err());
    }

    #[test]
    fn phi_is_order_independent() {
        let a = json!({"name":"t","description":"d","inputSchema":{"type":"object","properties":{"b":{"type":"string"},"a":{"type":"integer"}}}});
        let b = json!({"name":"t","description":"d","inputSchema":{"type":"object","properties":{"a":{"type":"integer"},"b":{"type":"string"}}}});
        let pa = serialize_phi(&validate_spec(&a, CandidateKind::Tool).unwrap());
        let pb = serialize_phi(&validate_spec(&b, CandidateKind::Tool).unwrap());
        assert_eq!(pa, pb);
        assert!(pa.find("- a (integer)").unwrap() < pa.find("- b (string)").unwrap());
    }

    #[test]
    fn phi_of_empty_schema_is_name_and_description() {
        let doc = json!({"name":"t","description":"does things","inputSchema":{"type":"object","properties":{}}});
        let phi = serialize_phi(&validate_spec(&doc, CandidateKind::Tool).unwrap());
        assert_eq!(phi, "name: t\ndescription: does things");
    }

    #[test]
    fn phi_of_agent_lists_tools() {
        let spec = validate_spec(&swe_agent_document(), CandidateKind::Agent).unwrap();
        let phi = serialize_phi(&spec);
        for tool in swe_agent_document()["tools"].as_array().unwrap() {
            assert!(phi.contains(tool.as_str().unwrap()), "missing {tool}");
        }
    }

    #[test]
    fn phi_flattens_nested_properties() {
        let doc = json!({"name":"q","description":"d","inputSchema":{"type":"object","properties":{
            "filters":{"type":"object","properties":{"status":{"type":"string"},"age":{"type":"integer"}},"required":["age"]}
        }}});
        let phi = serialize_phi(&validate_spec(&doc, CandidateKind::Tool).unwrap());
        assert!(phi.contains("- filters.age (integer, required)"));
        assert!(phi.contains("- filters.status (string)"));
    }

    #[test]
    fn bank_rejects_duplicates_and_kind_mix() {
        let mut bank = CandidateBank::new(CandidateKind::Tool);
        bank.insert(tool("a", "d", &[])).unwrap();
        assert_eq!(
            bank.insert(tool("a", "other", &[])),
            Err(ValidationError::DuplicateName("a".into()))
        );
        let agent = validate_spec(&swe_agent_document(), CandidateKind::Agent).unwrap();
        assert!(matches!(bank.insert(agent), Err(ValidationError::KindMismatch { .. })));
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn bank_file_round_trip() {
        let bank = CandidateBank::from_specs(
            CandidateKind::Tool,
            vec![
                tool("a", "first", &[("x", "string")]),
                tool("b", "second", &[]),
                tool("c", "third", &[("n", "integer"), ("m", "boolean")]),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        save_bank(&bank, &path).unwrap();
        let loaded = load_bank(&path).unwrap();
        assert_eq!(loaded, bank);
        assert_eq!(render_bank(&loaded), fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn bank_parses_array_form() {
        let text = format!("[{}]", swe_agent_document());
        let bank = parse_bank(&text).unwrap();
        assert_eq!(bank.kind(), CandidateKind::Agent);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn bank_duplicate_is_validation_error() {
        let doc = json!({"name":"a","description":"d","inputSchema":{"type":"object"}});
        let text = format!("{doc}\n{doc}\n");
        match parse_bank(&text) {
            Err(BankError::Validation { name, source }) => {
                assert_eq!(name, "a");
                assert_eq!(source, ValidationError::DuplicateName("a".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bank_parse_error_reports_line() {
        let doc = json!({"name":"a","description":"d","inputSchema":{"type":"object"}});
        let text = format!("{doc}\n\n{{not json\n");
        match parse_bank(&text) {
            Err(BankError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pool_membership_is_checked() {
        let bank = Arc::new(
            CandidateBank::from_specs(CandidateKind::Tool, vec![tool("a", "d", &[]), tool("b", "d", &[])]).unwrap(),
        );
        assert_eq!(
            CandidatePool::new(bank.clone(), Vec::<String>::new()).unwrap_err(),
            PoolError::Empty
        );
        assert_eq!(
            CandidatePool::new(bank.clone(), ["z"]).unwrap_err(),
            PoolError::UnknownMember("z".into())
        );
        let pool = CandidatePool::new(bank, ["b", "a", "b"]).unwrap();
        assert_eq!(pool.members(), ["b", "a"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_tool() -> impl Strategy<Value = CandidateSpec> {
            (
                "[a-z][a-z_]{0,11}",
                "[ -~]{0,40}",
                proptest::collection::btree_map(
                    "[a-z]{1,6}",
                    prop_oneof!["string", "integer", "number", "boolean", "object", "array"],
                    0..5,
                ),
                proptest::collection::vec("[A-Za-z ]{1,8}", 0..3),
                any::<bool>(),
            )
                .prop_map(|(name, description, props, tags, req)| {
                    let properties: Map<String, Value> =
                        props.iter().map(|(k, t)| (k.clone(), json!({"type": t}))).collect();
                    let required = req.then(|| props.keys().take(1).cloned().collect());
                    CandidateSpec::Tool(ToolSpec {
                        name,
                        description,
                        input_schema: InputSchema {
                            properties,
                            required,
                            extra: Map::new(),
                        },
                        tags,
                        provenance: Provenance::seed(),
                    })
                })
        }

        proptest! {
            #[test]
            fn validate_render_fixed_point(spec in arb_tool()) {
                let back = validate_spec(&spec.to_document(), CandidateKind::Tool).unwrap();
                prop_assert_eq!(back, spec);
            }

            #[test]
            fn phi_injective_over_distinct_names(a in arb_tool(), b in arb_tool()) {
                prop_assume!(a.name() != b.name());
                prop_assert_ne!(serialize_phi(&a), serialize_phi(&b));
            }

            #[test]
            fn bank_names_stay_unique(specs in proptest::collection::vec(arb_tool(), 0..20)) {
                let mut bank = CandidateBank::new(CandidateKind::Tool);
                for s in specs {
                    let _ = bank.insert(s);
                }
                let names: BTreeSet<&str> = bank.names().collect();
                prop_assert_eq!(names.len(), bank.len());
            }
        }
    }
}
