use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};

use graphroute_core::config::{BackendKind, ConfigError, PipelineConfig};
use graphroute_core::eval::{instances_from_records, render_runs, PoolSetting};
use graphroute_core::graph::{CandidateGraph, GraphError};
use graphroute_core::lra::{
    run_episodes, save_episode_logs, EpisodeConfig, ExecutorBinding, ExecutorEndpoint, LlmReasoner,
};
use graphroute_core::mutation::write_mutation_log;
use graphroute_core::pipeline::{
    build_stage, evaluate_stage, extract_stage, mutate_stage, pool_sources, sample_stage, synthesize_stage,
};
use graphroute_core::registry::{load_bank, BankError, CandidateBank, CandidatePool};
use graphroute_core::router::{build_router, RouterVariant};
use graphroute_core::sampler::CandidateSubset;
use graphroute_core::supervision::{load_records, save_records, SupervisionError};
use graphroute_core::trajectory::{load_trajectories, save_trajectories, TrajectoryError};

#[derive(Parser, Debug)]
#[command(
    name = "graphroute",
    version,
    about = "Build candidate graphs, synthesize routing data and evaluate routers"
)]
struct Cli {
    /// Pipeline configuration (TOML); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Live,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a bank and write its similarity graph.
    BuildGraph {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Grow the graph with mutated candidates.
    Mutate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Draw candidate subsets by random walks over the graph.
    Sample(SampleArgs),
    /// Sample subsets, propose tasks and simulate trajectories.
    Synthesize(SampleArgs),
    /// Turn trajectories into a routing dataset.
    Extract {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        /// Also write history-stripped twins.
        #[arg(long)]
        ablation: bool,
    },
    /// Measure routing accuracy over repeated runs.
    Evaluate(EvaluateArgs),
    /// Run the two-tool routing agent on tasks, one per line.
    LraRun(LraArgs),
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Number of subsets.
    #[arg(long)]
    count: Option<usize>,
}

const ROUTER_NAMES: [&str; 5] = ["embedding_q", "embedding_qh", "llm", "oracle", "random"];
const SETTING_NAMES: [&str; 4] = ["clean", "multi", "plus_mutation", "plus_external"];

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Router variant; repeat for several.
    #[arg(long = "router", value_parser = PossibleValuesParser::new(ROUTER_NAMES))]
    routers: Vec<String>,
    /// Pool setting; repeat for several.
    #[arg(long = "setting", value_parser = PossibleValuesParser::new(SETTING_NAMES))]
    settings: Vec<String>,
    /// Independent runs per cell.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    external_bank: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LraArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_parser = PossibleValuesParser::new(ROUTER_NAMES))]
    router: Option<String>,
    /// JSON executor binding; every candidate runs on the mock executor when absent.
    #[arg(long)]
    executors: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
}

/// Bad invocation: exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn at_line(path: &Path, line: usize, message: &str) -> anyhow::Error {
    anyhow!("{}:{line}: {message}", path.display())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(backend) = cli.backend {
        config.backend.kind = match backend {
            Backend::Mock => BackendKind::Mock,
            Backend::Live => BackendKind::Live,
        };
    }
    match config.validate() {
        Err(ConfigError::MissingSeed) => {
            Err(UsageError("the mock backend needs --seed or a `seed` in the config file".into()).into())
        }
        other => other.map(|_| config).map_err(Into::into),
    }
}

fn read_bank(path: &Path) -> Result<CandidateBank> {
    load_bank(path).map_err(|e| match e {
        BankError::Parse { line, message } => at_line(path, line, &message),
        other => anyhow!("{}: {other}", path.display()),
    })
}

fn read_graph(path: &Path) -> Result<CandidateGraph> {
    CandidateGraph::load(path).map_err(|e| match e {
        GraphError::Snapshot { line, message } => at_line(path, line, &message),
        other => anyhow!("{}: {other}", path.display()),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_subsets(path: &Path, subsets: &[CandidateSubset]) -> Result<()> {
    let mut text = String::new();
    for s in subsets {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    write(path, &text)
}

fn parse_router(name: &str) -> Result<RouterVariant> {
    name.parse().map_err(|e: String| UsageError(e).into())
}

fn parse_setting(name: &str) -> Result<PoolSetting> {
    name.parse().map_err(|e: String| UsageError(e).into())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let gateway = Arc::new(config.gateway()?);
    let out = |name: &str| cli.out.join(name);
    match &cli.command {
        Command::BuildGraph { bank } => {
            let bank = read_bank(bank)?;
            let graph = build_stage(&bank, &config, &gateway)?;
            graph.save(out("graph.json"))?;
            println!("graph: {} nodes, {} edges", graph.node_count(), graph.edge_count());
        }
        Command::Mutate { graph, rounds } => {
            if let Some(r) = rounds {
                config.mutation.rounds = *r;
            }
            let graph = read_graph(graph)?;
            let outcome = mutate_stage(&graph, &config, &gateway)?;
            outcome.graph.save(out("graph.json"))?;
            write_mutation_log(&outcome.records, out("mutations.jsonl"))?;
            println!(
                "mutation: {} of {} rounds accepted, {} nodes",
                outcome.accepted(),
                outcome.records.len(),
                outcome.graph.node_count()
            );
        }
        Command::Sample(args) => {
            if let Some(c) = args.count {
                config.sampler.subsets = c;
            }
            let graph = read_graph(&args.graph)?;
            let subsets = sample_stage(&graph, &config)?;
            write_subsets(&out("subsets.jsonl"), &subsets)?;
            println!("sampled {} subsets", subsets.len());
        }
        Command::Synthesize(args) => {
            if let Some(c) = args.count {
                config.sampler.subsets = c;
            }
            let graph = read_graph(&args.graph)?;
            let subsets = sample_stage(&graph, &config)?;
            write_subsets(&out("subsets.jsonl"), &subsets)?;
            let outcome = synthesize_stage(&subsets, &graph, &config, &gateway);
            save_trajectories(&outcome.trajectories, out("trajectories.jsonl"))?;
            for (i, e) in &outcome.failures {
                eprintln!("subset {i}: {e}");
            }
            println!(
                "synthesized {} trajectories ({} discarded)",
                outcome.trajectories.len(),
                outcome.failures.len()
            );
        }
        Command::Extract {
            graph,
            trajectories,
            ablation,
        } => {
            config.extraction.ablation |= *ablation;
            let graph = read_graph(graph)?;
            let trajs = load_trajectories(trajectories).map_err(|e| match e {
                TrajectoryError::Parse { line, message } => at_line(trajectories, line, &message),
                other => anyhow!("{}: {other}", trajectories.display()),
            })?;
            let dataset = extract_stage(&trajs, &graph, &config)?;
            save_records(&dataset.records, out("dataset.jsonl"))?;
            if let Some(twins) = &dataset.ablation {
                save_records(twins, out("dataset_ablation.jsonl"))?;
            }
            println!("extracted {} routing instances", dataset.len());
        }
        Command::Evaluate(args) => {
            if !args.routers.is_empty() {
                config.evaluation.routers = args.routers.iter().map(|r| parse_router(r)).collect::<Result<_>>()?;
            }
            if !args.settings.is_empty() {
                config.evaluation.settings = args.settings.iter().map(|s| parse_setting(s)).collect::<Result<_>>()?;
            }
            if let Some(k) = args.k {
                if k == 0 {
                    return Err(UsageError("--k must be at least 1".into()).into());
                }
                config.evaluation.k = k;
            }
            let external_path = args.external_bank.clone().or(config.evaluation.external_bank.clone());
            let external = external_path.as_deref().map(read_bank).transpose()?.map(Arc::new);
            let graph = read_graph(&args.graph)?;
            let records = load_records(&args.dataset).map_err(|e| match e {
                SupervisionError::Parse { line, message } => at_line(&args.dataset, line, &message),
                other => anyhow!("{}: {other}", args.dataset.display()),
            })?;
            let instances = instances_from_records(&records, Arc::new(graph.to_bank()))
                .map_err(|e| anyhow!("{}: {e}", args.dataset.display()))?;
            let sources = pool_sources(&graph, external)?;
            let (entries, report) = evaluate_stage(&instances, sources, &config, gateway)?;
            let runs: Vec<_> = entries.iter().flat_map(|e| e.evaluation.runs.clone()).collect();
            write(&out("results.jsonl"), &render_runs(&runs))?;
            write(&out("report.txt"), &report.render_text())?;
            write(&out("report.csv"), &report.render_csv())?;
            print!("{}", report.render_text());
        }
        Command::LraRun(args) => {
            if let Some(r) = &args.router {
                config.lra.router = parse_router(r)?;
            }
            if let Some(m) = args.max_steps {
                config.lra.max_steps = m;
            }
            let graph = read_graph(&args.graph)?;
            let pool = CandidatePool::whole_bank(Arc::new(graph.to_bank()))?;
            let tasks: Vec<String> = fs::read_to_string(&args.tasks)
                .with_context(|| format!("reading {}", args.tasks.display()))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let binding = match &args.executors {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<ExecutorBinding>(&text)
                        .map_err(|e| at_line(path, e.line(), &e.to_string()))?
                }
                None => ExecutorBinding::uniform(ExecutorEndpoint::Mock),
            };
            let router = build_router(&config.router_config(config.lra.router), gateway.clone());
            let reasoner = LlmReasoner::new(&gateway, &config.backend.chat_model, config.lra.temperature);
            let episode = EpisodeConfig {
                max_steps: config.lra.max_steps,
                seed: config.stage_seed("lra"),
            };
            let logs = run_episodes(&tasks, &pool, router.as_ref(), &binding, &reasoner, &episode)?;
            save_episode_logs(&logs, out("episodes.jsonl"))?;
            let finished = logs.iter().filter(|l| l.is_finished()).count();
            println!("ran {} episodes, {finished} finished", logs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
