//! Seeded DFS-style walks over the candidate graph producing locally
//! coherent candidate subsets.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CandidateGraph, EdgeKind};
use crate::util::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("graph has no candidates")]
    EmptyGraph,
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSize {
    Fixed(usize),
    /// Drawn uniformly from the inclusive range per sample.
    Range(usize, usize),
}

impl TargetSize {
    fn min(self) -> usize {
        match self {
            TargetSize::Fixed(n) => n,
            TargetSize::Range(lo, _) => lo,
        }
    }

    /// Largest size a subset can reach under this setting.
    pub fn max(self) -> usize {
        match self {
            TargetSize::Fixed(n) => n,
            TargetSize::Range(_, hi) => hi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_seeds: usize,
    pub target_size: TargetSize,
    pub restart_prob: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_seeds: 1,
            target_size: TargetSize::Range(4, 8),
            restart_prob: 0.15,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.num_seeds == 0 {
            return Err(SamplerError::BadConfig("num_seeds must be at least 1".into()));
        }
        if let TargetSize::Range(lo, hi) = self.target_size {
            if lo > hi {
                return Err(SamplerError::BadConfig(format!("empty target range {lo}..={hi}")));
            }
        }
        if self.target_size.min() < self.num_seeds {
            return Err(SamplerError::BadConfig(format!(
                "target size {} is below num_seeds {}",
                self.target_size.min(),
                self.num_seeds
            )));
        }
        if !(0.0..=1.0).contains(&self.restart_prob) {
            return Err(SamplerError::BadConfig("restart_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSubset {
    pub members: Vec<String>,
    pub seed_nodes: Vec<String>,
    pub walk_trace: Vec<TraceStep>,
}

impl CandidateSubset {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.members.iter().any(|m| m == name)
    }
}

struct Walk<'g> {
    graph: &'g CandidateGraph,
    rng: ChaCha8Rng,
    restart_prob: f64,
    visited: BTreeSet<String>,
    subset: CandidateSubset,
}

impl Walk<'_> {
    fn unvisited_neighbors(&self, name: &str) -> Vec<(String, EdgeKind)> {
        self.graph
            .neighbors(name)
            .filter(|(n, _)| !self.visited.contains(n))
            .cloned()
            .collect()
    }

    fn add_seed(&mut self, name: String) {
        self.visited.insert(name.clone());
        self.subset.members.push(name.clone());
        self.subset.seed_nodes.push(name);
    }

    /// Advances one stack by at most one new node. Returns false once the
    /// stack is exhausted.
    fn step(&mut self, stack: &mut Vec<String>) -> bool {
        while let Some(top) = stack.last().cloned() {
            let mut options = self.unvisited_neighbors(&top);
            if options.is_empty() {
                stack.pop();
                continue;
            }
            options.shuffle(&mut self.rng);
            let (next, kind) = options.swap_remove(0);
            self.visited.insert(next.clone());
            self.subset.members.push(next.clone());
            self.subset.walk_trace.push(TraceStep {
                from: top,
                to: next.clone(),
                kind,
            });
            stack.push(next);
            if self.rng.random_bool(self.restart_prob) {
                self.backtrack(stack);
            }
            return true;
        }
        false
    }

    /// Pops to the deepest ancestor that still has unvisited neighbors.
    fn backtrack(&mut self, stack: &mut Vec<String>) {
        let branch = stack[..stack.len() - 1]
            .iter()
            .rposition(|n| !self.unvisited_neighbors(n).is_empty());
        if let Some(i) = branch {
            stack.truncate(i + 1);
        }
    }
}

/// Samples one subset: `num_seeds` uniform seed nodes grown by interleaved
/// randomized DFS until the target size or frontier exhaustion; extra
/// uniform seeds fill any shortfall while unvisited nodes remain.
pub fn sample_subset(graph: &CandidateGraph, config: &SamplerConfig) -> Result<CandidateSubset, SamplerError> {
    config.validate()?;
    if graph.is_empty() {
        return Err(SamplerError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let target = match config.target_size {
        TargetSize::Fixed(n) => n,
        TargetSize::Range(lo, hi) => rng.random_range(lo..=hi),
    }
    .min(graph.node_count());
    let seeds: Vec<String> = rand::seq::index::sample(&mut rng, graph.node_count(), config.num_seeds.min(target))
        .into_iter()
        .map(|i| graph.names()[i].clone())
        .collect();
    let mut walk = Walk {
        graph,
        rng,
        restart_prob: config.restart_prob,
        visited: BTreeSet::new(),
        subset: CandidateSubset {
            members: Vec::new(),
            seed_nodes: Vec::new(),
            walk_trace: Vec::new(),
        },
    };
    let mut stacks: Vec<Vec<String>> = Vec::new();
    for s in seeds {
        walk.add_seed(s.clone());
        stacks.push(vec![s]);
    }
    loop {
        let mut progressed = false;
        for stack in stacks.iter_mut() {
            if walk.subset.members.len() >= target {
                break;
            }
            progressed |= walk.step(stack);
        }
        if walk.subset.members.len() >= target {
            break;
        }
        if !progressed {
            let remaining: Vec<&String> = graph.names().iter().filter(|n| !walk.visited.contains(*n)).collect();
            if remaining.is_empty() {
                break;
            }
            let extra = remaining[walk.rng.random_range(0..remaining.len())].clone();
            walk.add_seed(extra.clone());
            stacks = vec![vec![extra]];
        }
    }
    Ok(walk.subset)
}

/// Draws `count` subsets with per-index derived seeds.
pub fn sample_many(
    graph: &CandidateGraph,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<CandidateSubset>, SamplerError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = SamplerConfig {
                seed: derive_seed(config.seed, &format!("subset/{i}")),
                ..*config
            };
            sample_subset(graph, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::EmbeddingVector;
    use crate::graph::GraphConfig;
    use crate::registry::fixtures::tool;
    use crate::registry::{CandidateBank, CandidateKind};
    use proptest::prelude::*;

    /// Graph whose similarity edges follow `edges` exactly: each node gets a
    /// one-hot direction and connected pairs share a component.
    fn graph_with(names: &[&str], edges: &[(usize, usize)]) -> CandidateGraph {
        let bank = CandidateBank::from_specs(CandidateKind::Tool, names.iter().map(|n| tool(n, n, &[]))).unwrap();
        let dim = names.len() + edges.len();
        let mut vecs = vec![vec![0.0; dim]; names.len()];
        for (i, v) in vecs.iter_mut().enumerate() {
            v[i] = 1.0;
        }
        let mut g = CandidateGraph::from_embeddings(
            &bank,
            vecs.into_iter().map(|v| EmbeddingVector::new(v, "t")).collect(),
            GraphConfig::default(),
        )
        .unwrap();
        for &(a, b) in edges {
            g.insert_similarity_edge(names[a], names[b], 0.9);
        }
        g
    }

    fn cfg(target: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            num_seeds: 1,
            target_size: TargetSize::Fixed(target),
            restart_prob: 0.15,
            seed,
        }
    }

    #[test]
    fn isolated_node() {
        let g = graph_with(&["a"], &[]);
        let s = sample_subset(&g, &cfg(1, 3)).unwrap();
        assert_eq!(s.members, vec!["a"]);
        assert!(s.walk_trace.is_empty());
    }

    #[test]
    fn path_graph_is_fully_walked() {
        let g = graph_with(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        for seed in 0..50 {
            let s = sample_subset(&g, &cfg(3, seed)).unwrap();
            let set: BTreeSet<_> = s.members.iter().cloned().collect();
            assert_eq!(set.len(), 3);
            assert_eq!(s.seed_nodes.len(), 1, "connected graph needs no extra seed");
        }
        let s = (0..100)
            .map(|seed| sample_subset(&g, &cfg(3, seed)).unwrap())
            .find(|s| s.seed_nodes == ["a"])
            .unwrap();
        assert_eq!(s.members, vec!["a", "b", "c"]);
    }

    #[test]
    fn shortfall_draws_extra_seeds() {
        let g = graph_with(&["a", "b", "c", "d"], &[(0, 1)]);
        let s = sample_subset(&g, &cfg(4, 1)).unwrap();
        assert_eq!(s.members.len(), 4);
        assert!(s.seed_nodes.len() >= 3);
    }

    #[test]
    fn config_errors() {
        let g = graph_with(&["a"], &[]);
        let bad = SamplerConfig {
            num_seeds: 0,
            ..cfg(3, 0)
        };
        assert!(matches!(sample_subset(&g, &bad), Err(SamplerError::BadConfig(_))));
        let bad = SamplerConfig {
            num_seeds: 4,
            ..cfg(3, 0)
        };
        assert!(matches!(sample_subset(&g, &bad), Err(SamplerError::BadConfig(_))));
        let bad = SamplerConfig {
            restart_prob: 1.5,
            ..cfg(3, 0)
        };
        assert!(sample_subset(&g, &bad).is_err());
        let empty = CandidateGraph::empty(CandidateKind::Tool, GraphConfig::default());
        assert_eq!(sample_subset(&empty, &cfg(3, 0)), Err(SamplerError::EmptyGraph));
    }

    #[test]
    fn range_target_stays_in_bounds() {
        let names: Vec<String> = (0..12).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let edges: Vec<(usize, usize)> = (0..11).map(|i| (i, i + 1)).collect();
        let g = graph_with(&refs, &edges);
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let s = sample_subset(
                &g,
                &SamplerConfig {
                    seed,
                    ..SamplerConfig::default()
                },
            )
            .unwrap();
            assert!((4..=8).contains(&s.members.len()));
            seen.insert(s.members.len());
        }
        assert_eq!(seen.len(), 5);
    }

    fn arb_graph() -> impl Strategy<Value = CandidateGraph> {
        (1usize..14).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..(2 * n)).prop_map(move |pairs| {
                let names: Vec<String> = (0..n).map(|i| format!("c{i:02}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|(a, b)| a != b).collect();
                graph_with(&refs, &edges)
            })
        })
    }

    proptest! {
        #[test]
        fn subset_invariants(g in arb_graph(), target in 1usize..10, seeds in 1usize..3, seed in any::<u64>()) {
            prop_assume!(target >= seeds);
            let config = SamplerConfig { num_seeds: seeds, target_size: TargetSize::Fixed(target), restart_prob: 0.3, seed };
            let s = sample_subset(&g, &config).unwrap();
            prop_assert_eq!(&s, &sample_subset(&g, &config).unwrap());
            let distinct: BTreeSet<_> = s.members.iter().collect();
            prop_assert_eq!(distinct.len(), s.members.len());
            prop_assert!(!s.members.is_empty() && s.members.len() <= target);
            prop_assert_eq!(s.members.len(), target.min(g.node_count()));
            for m in &s.members {
                let as_to = s.walk_trace.iter().filter(|t| &t.to == m).count();
                if s.seed_nodes.contains(m) {
                    prop_assert_eq!(as_to, 0);
                } else {
                    prop_assert_eq!(as_to, 1);
                }
            }
            for t in &s.walk_trace {
                prop_assert!(g.has_edge(&t.from, &t.to, t.kind));
                prop_assert!(s.contains(&t.from));
            }
        }
    }
}
