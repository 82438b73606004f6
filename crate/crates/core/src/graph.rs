//! The candidate graph: similarity edges from thresholded cosine similarity
//! of candidate embeddings, plus mutation edges linking mutants to parents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::registry::{
    serialize_phi, validate_spec, CandidateBank, CandidateKind, CandidateSpec, SpecLookup, ValidationError,
};

/// Similarity threshold used when none is configured.
pub const DEFAULT_TAU: f64 = 0.82;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("cannot build a graph from an empty bank")]
    EmptyBank,
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    BadTau(f64),
    #[error("unknown parent `{0}`")]
    UnknownParent(String),
    #[error("candidate `{0}` already exists in the graph")]
    DuplicateName(String),
    #[error("invalid mutant: {0}")]
    InvalidMutant(String),
    #[error("expected {0} embeddings, got {1}")]
    EmbeddingCount(usize, usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub tau: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

impl GraphConfig {
    pub fn new(tau: f64) -> Result<Self, GraphError> {
        let cfg = Self { tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.tau > 0.0 && self.tau < 1.0 {
            Ok(())
        } else {
            Err(GraphError::BadTau(self.tau))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Similarity,
    Mutation,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Similarity => "similarity",
            EdgeKind::Mutation => "mutation",
        })
    }
}

/// An undirected edge stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub kind: EdgeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl Edge {
    pub fn key(&self) -> (String, String, EdgeKind) {
        (self.a.clone(), self.b.clone(), self.kind)
    }

    pub fn other(&self, name: &str) -> Option<&str> {
        if self.a == name {
            Some(&self.b)
        } else if self.b == name {
            Some(&self.a)
        } else {
            None
        }
    }
}

fn canonical(x: &str, y: &str) -> (String, String) {
    if x <= y {
        (x.to_string(), y.to_string())
    } else {
        (y.to_string(), x.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub spec: CandidateSpec,
    pub embedding: EmbeddingVector,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, GraphError> {
    if a.len() != b.len() {
        return Err(GraphError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(GraphError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, GraphError> {
    cosine(&a.values, &b.values)
}

type EdgeKey = (String, String, EdgeKind);

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    kind: CandidateKind,
    config: GraphConfig,
    order: Vec<String>,
    nodes: BTreeMap<String, GraphNode>,
    edges: BTreeMap<EdgeKey, Option<f64>>,
    adjacency: BTreeMap<String, BTreeSet<(String, EdgeKind)>>,
}

impl SpecLookup for CandidateGraph {
    fn kind(&self) -> CandidateKind {
        self.kind
    }

    fn lookup(&self, name: &str) -> Option<&CandidateSpec> {
        self.spec(name)
    }
}

impl CandidateGraph {
    pub fn empty(kind: CandidateKind, config: GraphConfig) -> Self {
        Self {
            kind,
            config,
            order: Vec::new(),
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            adjacency: BTreeMap::new(),
        }
    }

    /// Builds a graph from precomputed embeddings (one per bank entry, in order).
    pub fn from_embeddings(
        bank: &CandidateBank,
        embeddings: Vec<EmbeddingVector>,
        config: GraphConfig,
    ) -> Result<Self, GraphError> {
        config.validate()?;
        if bank.is_empty() {
            return Err(GraphError::EmptyBank);
        }
        if embeddings.len() != bank.len() {
            return Err(GraphError::EmbeddingCount(bank.len(), embeddings.len()));
        }
        let mut graph = Self::empty(bank.kind(), config);
        for (spec, embedding) in bank.entries().iter().zip(embeddings) {
            graph.insert_node(spec.clone(), embedding);
        }
        let vectors: Vec<&EmbeddingVector> = graph.order.iter().map(|n| &graph.nodes[n].embedding).collect();
        let tau = config.tau;
        let found: Vec<(usize, usize, f64)> = (0..vectors.len())
            .into_par_iter()
            .map(|i| {
                let mut row = Vec::new();
                for j in (i + 1)..vectors.len() {
                    let sim = cosine_similarity(vectors[i], vectors[j])?;
                    if sim > tau {
                        row.push((i, j, sim));
                    }
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>, GraphError>>()?
            .into_iter()
            .flatten()
            .collect();
        for (i, j, sim) in found {
            let (a, b) = (graph.order[i].clone(), graph.order[j].clone());
            graph.insert_edge(&a, &b, EdgeKind::Similarity, Some(sim));
        }
        Ok(graph)
    }

    pub fn kind(&self) -> CandidateKind {
        self.kind
    }

    pub fn config(&self) -> GraphConfig {
        self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn node_count(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node names in insertion order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn node(&self, name: &str) -> Option<&GraphNode> {
        self.nodes.get(name)
    }

    pub fn spec(&self, name: &str) -> Option<&CandidateSpec> {
        self.nodes.get(name).map(|n| &n.spec)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.order.iter().map(|n| &self.nodes[n])
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().map(|((a, b, kind), weight)| Edge {
            a: a.clone(),
            b: b.clone(),
            kind: *kind,
            weight: *weight,
        })
    }

    pub fn has_edge(&self, x: &str, y: &str, kind: EdgeKind) -> bool {
        let (a, b) = canonical(x, y);
        self.edges.contains_key(&(a, b, kind))
    }

    pub fn edge_count_of(&self, kind: EdgeKind) -> usize {
        self.edges.keys().filter(|(_, _, k)| *k == kind).count()
    }

    /// Neighbors over both edge kinds, as (name, kind) pairs sorted by name.
    pub fn neighbors(&self, name: &str) -> impl Iterator<Item = &(String, EdgeKind)> {
        self.adjacency.get(name).into_iter().flatten()
    }

    pub fn degree_of(&self, name: &str, kind: EdgeKind) -> usize {
        self.neighbors(name).filter(|(_, k)| *k == kind).count()
    }

    pub fn seeds(&self) -> impl Iterator<Item = &str> {
        self.nodes()
            .filter(|n| !n.spec.provenance().is_mutant())
            .map(|n| n.spec.name())
    }

    pub fn mutants(&self) -> impl Iterator<Item = &str> {
        self.nodes()
            .filter(|n| n.spec.provenance().is_mutant())
            .map(|n| n.spec.name())
    }

    /// All node specs as a bank, in insertion order.
    pub fn to_bank(&self) -> CandidateBank {
        CandidateBank::from_specs(self.kind, self.nodes().map(|n| n.spec.clone())).expect("graph node names are unique")
    }

    fn insert_node(&mut self, spec: CandidateSpec, embedding: EmbeddingVector) {
        let name = spec.name().to_string();
        self.order.push(name.clone());
        self.adjacency.entry(name.clone()).or_default();
        self.nodes.insert(name, GraphNode { spec, embedding });
    }

    /// Plants a similarity edge regardless of embeddings, for walk tests.
    #[cfg(test)]
    pub(crate) fn insert_similarity_edge(&mut self, x: &str, y: &str, weight: f64) {
        self.insert_edge(x, y, EdgeKind::Similarity, Some(weight));
    }

    fn insert_edge(&mut self, x: &str, y: &str, kind: EdgeKind, weight: Option<f64>) {
        let (a, b) = canonical(x, y);
        self.adjacency.entry(a.clone()).or_default().insert((b.clone(), kind));
        self.adjacency.entry(b.clone()).or_default().insert((a.clone(), kind));
        self.edges.insert((a, b, kind), weight);
    }

    /// Inserts a mutant linked to `parent`; also links it by similarity to
    /// every existing node under the graph's threshold.
    pub fn add_mutant(
        &mut self,
        parent: &str,
        mutant: CandidateSpec,
        embedding: EmbeddingVector,
    ) -> Result<(), GraphError> {
        if !self.nodes.contains_key(parent) {
            return Err(GraphError::UnknownParent(parent.to_string()));
        }
        if self.nodes.contains_key(mutant.name()) {
            return Err(GraphError::DuplicateName(mutant.name().to_string()));
        }
        if mutant.kind() != self.kind {
            return Err(GraphError::Validation(ValidationError::KindMismatch {
                expected: self.kind,
                found: mutant.kind(),
            }));
        }
        let prov = mutant.provenance();
        if !prov.is_mutant() || prov.parent_name.as_deref() != Some(parent) {
            return Err(GraphError::InvalidMutant(format!(
                "provenance of `{}` does not name `{parent}` as parent",
                mutant.name()
            )));
        }
        let mut sims = Vec::new();
        for name in &self.order {
            let sim = cosine_similarity(&self.nodes[name].embedding, &embedding)?;
            if sim > self.config.tau {
                sims.push((name.clone(), sim));
            }
        }
        let name = mutant.name().to_string();
        self.insert_node(mutant, embedding);
        self.insert_edge(parent, &name, EdgeKind::Mutation, None);
        for (other, sim) in sims {
            self.insert_edge(&other, &name, EdgeKind::Similarity, Some(sim));
        }
        Ok(())
    }

    /// Line-oriented snapshot: a header, one line per node, one per edge.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let header = json!({
            "type": "graph",
            "kind": self.kind,
            "tau": self.config.tau,
            "nodes": self.node_count(),
            "edges": self.edge_count(),
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for node in self.nodes() {
            let line = json!({
                "type": "node",
                "spec": node.spec.to_document(),
                "embedding_model": node.embedding.model_id,
                "embedding": node.embedding.values,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        for edge in self.edges() {
            let mut line = json!({"type": "edge", "a": edge.a, "b": edge.b, "kind": edge.kind});
            if let Some(w) = edge.weight {
                line["weight"] = json!(w);
            }
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, GraphError> {
        let err = |line: usize, message: String| GraphError::Snapshot { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty snapshot".into()))?;
        let header: Value = serde_json::from_str(header).map_err(|e| err(1, e.to_string()))?;
        if header.get("type").and_then(Value::as_str) != Some("graph") {
            return Err(err(1, "missing graph header".into()));
        }
        let kind: CandidateKind =
            serde_json::from_value(header["kind"].clone()).map_err(|e| err(1, format!("kind: {e}")))?;
        let tau = header["tau"].as_f64().ok_or_else(|| err(1, "missing tau".into()))?;
        let config = GraphConfig::new(tau).map_err(|e| err(1, e.to_string()))?;
        let mut graph = Self::empty(kind, config);
        for (i, line) in lines {
            let lineno = i + 1;
            let value: Value = serde_json::from_str(line).map_err(|e| err(lineno, e.to_string()))?;
            match value.get("type").and_then(Value::as_str) {
                Some("node") => {
                    let spec = validate_spec(&value["spec"], kind).map_err(|e| err(lineno, e.to_string()))?;
                    if graph.contains(spec.name()) {
                        return Err(err(lineno, format!("duplicate node `{}`", spec.name())));
                    }
                    let values: Vec<f64> = serde_json::from_value(value["embedding"].clone())
                        .map_err(|e| err(lineno, format!("embedding: {e}")))?;
                    let model = value["embedding_model"].as_str().unwrap_or_default();
                    graph.insert_node(spec, EmbeddingVector::new(values, model));
                }
                Some("edge") => {
                    let edge: Edge = serde_json::from_value(value.clone()).map_err(|e| err(lineno, e.to_string()))?;
                    if edge.a >= edge.b {
                        return Err(err(lineno, "edge endpoints must satisfy a < b".into()));
                    }
                    if !graph.contains(&edge.a) || !graph.contains(&edge.b) {
                        return Err(err(lineno, "edge references an unknown node".into()));
                    }
                    graph.insert_edge(&edge.a, &edge.b, edge.kind, edge.weight);
                }
                _ => return Err(err(lineno, "unknown record type".into())),
            }
        }
        Ok(graph)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_snapshot().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::from_snapshot(&fs::read_to_string(path)?)
    }
}

/// Embeds the canonical text of every candidate, in parallel batches.
pub fn embed_specs<'a>(
    specs: impl IntoIterator<Item = &'a CandidateSpec>,
    gateway: &Gateway,
) -> Result<Vec<EmbeddingVector>, GraphError> {
    let texts: Vec<String> = specs.into_iter().map(serialize_phi).collect();
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let batch = gateway.config().embed_batch.max(1);
    let chunks: Vec<Vec<EmbeddingVector>> = texts
        .par_chunks(batch)
        .map(|chunk| gateway.embed_texts(chunk))
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn build_graph(bank: &CandidateBank, config: GraphConfig, gateway: &Gateway) -> Result<CandidateGraph, GraphError> {
    config.validate()?;
    if bank.is_empty() {
        return Err(GraphError::EmptyBank);
    }
    let embeddings = embed_specs(bank.entries(), gateway)?;
    CandidateGraph::from_embeddings(bank, embeddings, config)
}
