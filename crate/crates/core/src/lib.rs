//! Candidate graphs, self-evolutionary mutation, trajectory synthesis and
//! history-aware routing for tool and agent selection.

pub mod config;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod lra;
pub mod mutation;
pub mod pipeline;
pub mod prompts;
pub mod registry;
pub mod router;
pub mod sampler;
pub mod supervision;
pub mod trajectory;
pub mod util;

pub use config::{BackendKind, ConfigError, PipelineConfig};
pub use eval::{evaluate, EvalError, Evaluation, Metrics, PoolBuilder, PoolSetting, PoolSources, Report};
pub use gateway::{ChatMessage, ChatRequest, Gateway, GatewayConfig, GatewayError};
pub use graph::{build_graph, cosine, CandidateGraph, EdgeKind, GraphConfig, GraphError, DEFAULT_TAU};
pub use lra::{run_episode, EpisodeConfig, EpisodeLog, ExecutorBinding, ExecutorEndpoint, LraError, Reasoner};
pub use mutation::{evolve, EvolveConfig, EvolveOutcome, MutationError, MutationOperator};
pub use registry::{
    load_bank, parse_bank, serialize_phi, validate_spec, CandidateBank, CandidateKind, CandidatePool, CandidateSpec,
    ValidationError,
};
pub use router::{build_router, parse_decision, RouteRequest, Router, RouterConfig, RouterDecision, RouterVariant};
pub use sampler::{sample_subset, CandidateSubset, SamplerConfig, SamplerError, TargetSize};
pub use supervision::{extract_instances, render_sample, DatasetRecord, RoutingInstance, SupervisionError};
pub use trajectory::{simulate_trajectory, SynthConfig, Trajectory, TrajectoryError, Turn};
