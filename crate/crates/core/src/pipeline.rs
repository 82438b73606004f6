//! Stage functions binding the modules into the end-to-end data pipeline:
//! graph, mutation, sampling, synthesis, extraction and evaluation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::eval::{evaluate, EvalError, Evaluation, PoolBuilder, PoolSetting, PoolSources, Report};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::{build_graph, CandidateGraph, GraphError};
use crate::mutation::{evolve, EvolveOutcome, MutationError};
use crate::registry::{CandidateBank, CandidatePool, PoolError};
use crate::router::{build_router, RouterVariant};
use crate::sampler::{sample_many, CandidateSubset, SamplerError};
use crate::supervision::{build_dataset, Dataset, RoutingInstance, SupervisionError};
use crate::trajectory::{synthesize, SynthesisOutcome, Trajectory};
use crate::util::rng_for;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("mutation stopped after {accepted} accepted rounds: {source}")]
    MutationGateway {
        accepted: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no trajectories survived synthesis ({failures} failures)")]
    NoTrajectories { failures: usize },
}

pub fn build_stage(
    bank: &CandidateBank,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<CandidateGraph, PipelineError> {
    Ok(build_graph(bank, config.graph_config(), gateway)?)
}

/// Evolves the graph; a gateway failure mid-run is an error.
pub fn mutate_stage(
    graph: &CandidateGraph,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<EvolveOutcome, PipelineError> {
    let outcome = evolve(graph, config.mutation.rounds, &config.evolve_config(), gateway)?;
    if let Some(source) = outcome.error.clone() {
        return Err(PipelineError::MutationGateway {
            accepted: outcome.accepted(),
            source,
        });
    }
    Ok(outcome)
}

pub fn sample_stage(graph: &CandidateGraph, config: &PipelineConfig) -> Result<Vec<CandidateSubset>, PipelineError> {
    Ok(sample_many(graph, &config.sampler_config(), config.sampler.subsets)?)
}

pub fn synthesize_stage(
    subsets: &[CandidateSubset],
    graph: &CandidateGraph,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> SynthesisOutcome {
    synthesize(subsets, graph, &config.synth_config(), gateway)
}

/// The trajectory's subset plus random other graph nodes, shuffled, up to
/// `pool_size` members.
pub fn extraction_pool(
    trajectory: &Trajectory,
    graph: &CandidateGraph,
    bank: Arc<CandidateBank>,
    pool_size: usize,
    seed: u64,
) -> Result<CandidatePool, PoolError> {
    let mut rng = rng_for(seed, &format!("pool/{}", trajectory.id));
    let mut others: Vec<&String> = graph
        .names()
        .iter()
        .filter(|n| !trajectory.subset.contains(n))
        .collect();
    others.shuffle(&mut rng);
    let room = pool_size.saturating_sub(trajectory.subset.len());
    let mut members: Vec<String> = trajectory.subset.members.clone();
    members.extend(others.into_iter().take(room).cloned());
    members.shuffle(&mut rng);
    CandidatePool::new(bank, members)
}

pub fn extraction_pools(
    trajectories: &[Trajectory],
    graph: &CandidateGraph,
    config: &PipelineConfig,
) -> Result<Vec<CandidatePool>, PoolError> {
    let bank = Arc::new(graph.to_bank());
    let seed = config.stage_seed("extract");
    trajectories
        .iter()
        .map(|t| extraction_pool(t, graph, bank.clone(), config.extraction.pool_size, seed))
        .collect()
}

pub fn extract_stage(
    trajectories: &[Trajectory],
    graph: &CandidateGraph,
    config: &PipelineConfig,
) -> Result<Dataset, PipelineError> {
    let pools = extraction_pools(trajectories, graph, config)?;
    Ok(build_dataset(trajectories, &pools, config.extraction.ablation)?)
}

/// Seed candidates form the multi-server pool; mutants are the distractors.
pub fn pool_sources(
    graph: &CandidateGraph,
    external: Option<Arc<CandidateBank>>,
) -> Result<PoolSources, PipelineError> {
    let bank = graph.to_bank();
    let pick = |names: Vec<&str>| -> Result<Arc<CandidateBank>, PipelineError> {
        let specs = names.into_iter().filter_map(|n| bank.get(n).cloned());
        Ok(Arc::new(
            CandidateBank::from_specs(bank.kind(), specs).map_err(GraphError::from)?,
        ))
    };
    Ok(PoolSources {
        server_banks: vec![pick(graph.seeds().collect())?],
        mutants: Some(pick(graph.mutants().collect())?),
        external,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub router: RouterVariant,
    pub setting: PoolSetting,
    pub evaluation: Evaluation,
}

/// Evaluates every configured router under every configured setting.
/// Each router uses one seed across settings so columns are comparable.
pub fn evaluate_stage(
    instances: &[RoutingInstance],
    sources: PoolSources,
    config: &PipelineConfig,
    gateway: Arc<Gateway>,
) -> Result<(Vec<EvalEntry>, Report), PipelineError> {
    let builder = PoolBuilder::new(sources);
    let mut entries = Vec::new();
    for &variant in &config.evaluation.routers {
        let router = build_router(&config.router_config(variant), gateway.clone());
        let seed = config.stage_seed(&format!("evaluate/{variant}"));
        for &setting in &config.evaluation.settings {
            let evaluation = evaluate(router.as_ref(), instances, setting, &builder, config.evaluation.k, seed)?;
            entries.push(EvalEntry {
                router: variant,
                setting,
                evaluation,
            });
        }
    }
    let cells: Vec<(String, PoolSetting, f64)> = entries
        .iter()
        .map(|e| (e.router.to_string(), e.setting, e.evaluation.metrics.avg_at_k))
        .collect();
    Ok((entries, Report::by_setting(&cells)))
}

#[derive(Debug)]
pub struct PipelineRun {
    pub seed_graph: CandidateGraph,
    pub evolved: EvolveOutcome,
    pub subsets: Vec<CandidateSubset>,
    pub synthesis: SynthesisOutcome,
    pub dataset: Dataset,
    pub evaluations: Vec<EvalEntry>,
    pub report: Report,
}

/// Runs every stage in order from a seed bank.
pub fn run_pipeline(
    bank: &CandidateBank,
    external: Option<Arc<CandidateBank>>,
    config: &PipelineConfig,
    gateway: Arc<Gateway>,
) -> Result<PipelineRun, PipelineError> {
    let seed_graph = build_stage(bank, config, &gateway)?;
    let evolved = mutate_stage(&seed_graph, config, &gateway)?;
    let subsets = sample_stage(&evolved.graph, config)?;
    let synthesis = synthesize_stage(&subsets, &evolved.graph, config, &gateway);
    if synthesis.trajectories.is_empty() {
        return Err(PipelineError::NoTrajectories {
            failures: synthesis.failures.len(),
        });
    }
    let dataset = extract_stage(&synthesis.trajectories, &evolved.graph, config)?;
    let catalog = Arc::new(evolved.graph.to_bank());
    let instances = crate::eval::instances_from_records(&dataset.records, catalog)?;
    let sources = pool_sources(&evolved.graph, external)?;
    let (evaluations, report) = evaluate_stage(&instances, sources, config, gateway)?;
    Ok(PipelineRun {
        seed_graph,
        evolved,
        subsets,
        synthesis,
        dataset,
        evaluations,
        report,
    })
}
