//! Acceptance suite: one PASS/FAIL line per criterion, offline with mock backends.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use graphroute_core::config::PipelineConfig;
use graphroute_core::eval::{evaluate, render_runs, PoolBuilder, PoolSetting, PoolSources};
use graphroute_core::gateway::{EmbeddingVector, Gateway};
use graphroute_core::graph::{build_graph, cosine, CandidateGraph, EdgeKind, GraphConfig};
use graphroute_core::lra::{
    run_episode, EpisodeConfig, EpisodeLog, ExecutorBinding, ExecutorEndpoint, LlmReasoner, ScriptedReasoner, TurnEvent,
};
use graphroute_core::mutation::{evolve, EvolveConfig};
use graphroute_core::pipeline::run_pipeline;
use graphroute_core::registry::{serialize_phi, CandidateBank, CandidateKind, CandidatePool};
use graphroute_core::router::{
    parse_decision, EmbeddingMode, EmbeddingRouter, OracleRouter, RandomRouter, RouteRequest, Router, RouterVariant,
};
use graphroute_core::sampler::CandidateSubset;
use graphroute_core::supervision::{
    build_dataset, extract_instances, render_records, render_sample, DatasetRecord, InstanceOrigin, RoutingInstance,
};
use graphroute_core::trajectory::{CandidateCall, PlanStep, TaskPlan, Trajectory, Turn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn brute_force_edges(names: &[String], vectors: &[Vec<f64>], tau: f64) -> BTreeSet<(String, String)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = BTreeSet::new();
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            if dot / (norm(&vectors[i]) * norm(&vectors[j])) > tau {
                let (a, b) = if names[i] < names[j] {
                    (&names[i], &names[j])
                } else {
                    (&names[j], &names[i])
                };
                out.insert((a.clone(), b.clone()));
            }
        }
    }
    out
}

fn similarity_edges(graph: &CandidateGraph) -> BTreeSet<(String, String)> {
    graph
        .edges()
        .filter(|e| e.kind == EdgeKind::Similarity)
        .map(|e| {
            let (a, b, _) = e.key();
            (a, b)
        })
        .collect()
}

fn graph_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let bank = common::family_bank(40, 5, 11);
    let gateway = Gateway::mock(11);
    let graph = build_graph(&bank, GraphConfig::default(), &gateway).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let names: Vec<String> = bank.names().map(str::to_string).collect();
    let texts: Vec<String> = bank.entries().iter().map(serialize_phi).collect();
    let vectors: Vec<Vec<f64>> = gateway
        .embed_texts(&texts)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|v| v.values)
        .collect();
    let expected = brute_force_edges(&names, &vectors, 0.82);
    let found = similarity_edges(&graph);
    ensure(bank.len() == 200, || format!("bank has {} candidates", bank.len()))?;
    ensure(!expected.is_empty(), || {
        "oracle found no edges; the fixture is too sparse".into()
    })?;
    ensure(found == expected, || {
        format!(
            "edge sets differ: {} only in graph, {} only in oracle",
            found.difference(&expected).count(),
            expected.difference(&found).count()
        )
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("build took {}", secs(elapsed))
    })?;
    Ok(format!(
        "200 nodes, {} edges equal to brute force, built in {}",
        found.len(),
        secs(elapsed)
    ))
}

/// Two-node graph whose single pair has the given planted embeddings.
fn planted_pair(a: Vec<f64>, b: Vec<f64>, tau: f64) -> CandidateGraph {
    let bank = CandidateBank::from_specs(
        CandidateKind::Tool,
        [
            common::tool("left_tool", "left", &[], &[]),
            common::tool("right_tool", "right", &[], &[]),
        ],
    )
    .unwrap();
    CandidateGraph::from_embeddings(
        &bank,
        vec![EmbeddingVector::new(a, "planted"), EmbeddingVector::new(b, "planted")],
        GraphConfig::new(tau).unwrap(),
    )
    .unwrap()
}

/// A unit-length second vector whose cosine with (1, 0) computes to exactly `target`.
fn exact_similarity_vector(target: f64) -> Option<Vec<f64>> {
    let mut y = (1.0 - target * target).sqrt();
    let a = [1.0, 0.0];
    for _ in 0..2000 {
        let c = cosine(&a, &[target, y]).ok()?;
        if c == target {
            return Some(vec![target, y]);
        }
        y = if c > target {
            f64::from_bits(y.to_bits() + 1)
        } else {
            f64::from_bits(y.to_bits() - 1)
        };
    }
    None
}

fn threshold_semantics() -> Outcome {
    let tau = 0.82;
    let unit = |s: f64| vec![s, (1.0 - s * s).sqrt()];
    let above = planted_pair(vec![1.0, 0.0], unit(0.83), tau);
    let below = planted_pair(vec![1.0, 0.0], unit(0.81), tau);
    let exact = exact_similarity_vector(tau).ok_or("no vector with cosine exactly 0.82 found")?;
    ensure(cosine(&[1.0, 0.0], &exact).unwrap() == 0.82, || {
        "planted similarity is not exactly 0.82".into()
    })?;
    let at = planted_pair(vec![1.0, 0.0], exact, tau);
    ensure(above.edge_count_of(EdgeKind::Similarity) == 1, || {
        "0.83 pair is not an edge".into()
    })?;
    ensure(below.edge_count_of(EdgeKind::Similarity) == 0, || {
        "0.81 pair is an edge".into()
    })?;
    ensure(at.edge_count_of(EdgeKind::Similarity) == 0, || {
        "exact 0.82 pair is an edge".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let taus = [0.3, 0.5, 0.7, 0.82, 0.9, 0.97];
    for g in 0..50 {
        let n = rng.random_range(5..25);
        let bank = common::numbered_bank("node", n);
        let base: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vectors: Vec<EmbeddingVector> = (0..n)
            .map(|_| {
                let noise = rng.random_range(0.0..1.5);
                EmbeddingVector::new(
                    base.iter().map(|b| b + noise * rng.random_range(-1.0..1.0)).collect(),
                    "r",
                )
            })
            .collect();
        let mut previous: Option<BTreeSet<(String, String)>> = None;
        for &t in &taus {
            let graph = CandidateGraph::from_embeddings(&bank, vectors.clone(), GraphConfig::new(t).unwrap()).unwrap();
            let edges = similarity_edges(&graph);
            if let Some(prev) = &previous {
                ensure(edges.is_subset(prev), || {
                    format!("graph {g}: raising tau to {t} added edges")
                })?;
            }
            previous = Some(edges);
        }
    }
    Ok("0.83 edge, 0.81 and exactly 0.82 not; edge sets shrink with tau on 50 random graphs".into())
}

fn mutation_forest() -> Outcome {
    let start = Instant::now();
    let gateway = Gateway::mock(42);
    let seeds = common::seed_bank();
    let graph = build_graph(&seeds, GraphConfig::default(), &gateway).map_err(|e| e.to_string())?;
    let cfg = EvolveConfig {
        seed: 42,
        ..EvolveConfig::default()
    };
    let first = evolve(&graph, 40, &cfg, &gateway).map_err(|e| e.to_string())?;
    let second = evolve(&graph, 40, &cfg, &Gateway::mock(42)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let g = &first.graph;
    ensure(first.accepted() == 40, || {
        format!("{} of 40 rounds accepted", first.accepted())
    })?;
    ensure(g.node_count() == 60, || format!("{} nodes", g.node_count()))?;
    ensure(g.edge_count_of(EdgeKind::Mutation) == 40, || {
        format!("{} mutation edges", g.edge_count_of(EdgeKind::Mutation))
    })?;

    let mut parents_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for edge in g.edges().filter(|e| e.kind == EdgeKind::Mutation) {
        let (a, b, _) = edge.key();
        let (parent, child) = if g.spec(&b).unwrap().provenance().parent_name.as_deref() == Some(a.as_str()) {
            (a, b)
        } else {
            (b, a)
        };
        *parents_of.entry(child.clone()).or_default() += 1;
        children.entry(parent).or_default().push(child);
    }
    for m in g.mutants() {
        ensure(parents_of.get(m) == Some(&1), || {
            format!("mutant {m} has {:?} parent edges", parents_of.get(m))
        })?;
    }
    let mut reached: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<String> = g.seeds().map(str::to_string).collect();
    while let Some(n) = queue.pop_front() {
        for c in children.get(&n).into_iter().flatten() {
            if reached.insert(c.clone()) {
                queue.push_back(c.clone());
            }
        }
    }
    let mutants: BTreeSet<String> = g.mutants().map(str::to_string).collect();
    ensure(reached == mutants, || {
        "some mutant is unreachable from every seed".into()
    })?;
    ensure(first.graph.to_snapshot() == second.graph.to_snapshot(), || {
        "snapshots differ across runs".into()
    })?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "60 nodes, 40 single-parent mutants reachable from seeds, byte-identical reruns, {}",
        secs(elapsed)
    ))
}

fn hand_trajectories(pool_names: &[String]) -> Vec<Trajectory> {
    (0..25)
        .map(|t| {
            let actions = 1 + t % 4;
            let mut turns = Vec::new();
            let mut used = Vec::new();
            for j in 0..actions {
                turns.push(Turn::observation(format!("request {j} of conversation {t}")));
                let calls = if j == 0 && t % 2 == 0 { 1 + t % 2 } else { (t + j) % 3 };
                let calls: Vec<CandidateCall> = (0..calls)
                    .map(|c| {
                        let name = pool_names[(t * 3 + j * 2 + c) % pool_names.len()].clone();
                        used.push(name.clone());
                        CandidateCall::new(name, json!({"query": format!("q{t}-{j}-{c}")}), format!("result {c}"))
                    })
                    .collect();
                let (text, summary) = if calls.is_empty() {
                    (format!("plain reply {j}"), None)
                } else {
                    ("<think>pick</think>".to_string(), Some(format!("summary {j}")))
                };
                turns.push(Turn::action(text, calls, summary));
            }
            used.dedup();
            Trajectory {
                id: format!("hand-{t:02}"),
                kind: CandidateKind::Tool,
                subset: CandidateSubset {
                    members: used.clone(),
                    seed_nodes: used.first().cloned().into_iter().collect(),
                    walk_trace: Vec::new(),
                },
                plan: TaskPlan {
                    task: format!("conversation {t}"),
                    steps: used
                        .iter()
                        .map(|u| PlanStep {
                            goal: "g".into(),
                            candidate: u.clone(),
                        })
                        .collect(),
                },
                turns,
            }
        })
        .collect()
}

/// Independent recount: call arrays in the serialized trajectory.
fn recount_calls(trajectory: &Trajectory) -> usize {
    let value = serde_json::to_value(trajectory).unwrap();
    value["turns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.get("calls").and_then(Value::as_array).map_or(0, Vec::len))
        .sum()
}

fn supervision_correctness() -> Outcome {
    let bank = Arc::new(common::numbered_bank("cand", 12));
    let pool = CandidatePool::whole_bank(bank.clone()).unwrap();
    let names: Vec<String> = pool.members().to_vec();
    let trajectories = hand_trajectories(&names);
    let mut total = 0;
    let mut first_step = 0;
    for traj in &trajectories {
        let instances = extract_instances(traj, &pool).map_err(|e| e.to_string())?;
        ensure(instances.len() == recount_calls(traj), || {
            format!("{}: count mismatch", traj.id)
        })?;
        let mut expected = Vec::new();
        for (i, turn) in traj.turns.iter().enumerate() {
            if let Some(action) = turn.as_action() {
                let Turn::Observation { text } = &traj.turns[i - 1] else {
                    return Err(format!("{}: turn {} is not an observation", traj.id, i - 1));
                };
                for call in &action.calls {
                    expected.push((text.clone(), traj.turns[..i - 1].to_vec(), call.name.clone()));
                }
            }
        }
        let got: Vec<_> = instances
            .iter()
            .map(|r| (r.query.clone(), r.history.clone(), r.label.clone()))
            .collect();
        ensure(got == expected, || {
            format!("{}: (query, history, label) triples differ", traj.id)
        })?;
        first_step += instances.iter().filter(|r| r.history.is_empty()).count();
        total += instances.len();
    }
    ensure(first_step > 0, || "no first-action instance was exercised".into())?;
    let pools = vec![pool; trajectories.len()];
    let dataset = build_dataset(&trajectories, &pools, true).map_err(|e| e.to_string())?;
    let twins = dataset.ablation.as_ref().ok_or("no ablation twins")?;
    ensure(dataset.len() == total && twins.len() == total, || {
        "dataset sizes differ from the recount".into()
    })?;
    for (r, t) in dataset.records.iter().zip(twins) {
        ensure(
            r.instance.query == t.instance.query
                && r.instance.label == t.instance.label
                && r.instance.pool == t.instance.pool,
            || "twin changed query, label or pool".into(),
        )?;
        ensure(t.instance.history.is_empty(), || "twin kept history".into())?;
        let open = r.sample.user.find("<history>").unwrap();
        let close = r.sample.user.find("</history>").unwrap() + "</history>".len();
        let stripped = format!(
            "{}<history></history>{}",
            &r.sample.user[..open],
            &r.sample.user[close..]
        );
        ensure(stripped == t.sample.user && r.sample.system == t.sample.system, || {
            "twin text differs outside history".into()
        })?;
    }
    Ok(format!(
        "25 trajectories, {total} instances equal to recount, {first_step} first-action, twins differ only in history"
    ))
}

const AGENT_ROUTER_SYSTEM: &str = "You are an Agent Router.\nYour task is to analyze the meaning of a user query and select the most relevant agents based on the agents' descriptions and schemas.\n\nGuidelines:\n1. Consider both the agent descriptions and input schemas when judging relevance.\n2. Use the inputSchema to understand what parameters each agent accepts.\n3. Do not infer hidden capabilities or invent agents.\n4. Return only one agent that is most relevant.\n5. Output strictly in the required format: [\"agent_name\"], no extra commentary.";

const AGENT_ROUTER_TAIL: &str = "Task:\n<task>\nAnalyze the current query in the context of the user's past queries and agent descriptions.\nReturn the most relevant agent based on their descriptions and schemas.\n</task>\n\nOutput requirements:\n###\n- First, think through your reasoning inside <think></think> tags\n- Then output only one agent name as a JSON array\n- Format:\n<think>\nYour reasoning about which agent to select...\n</think>\n\n[\"agent_name\"]\n###";

const FORECAST_QUERY: &str = "Please execute a financial forecast to evaluate the impact on overall business profitability given the recent trading adjustments and risk evaluations. Use a predictive model to analyze the potential outcomes and suggest appropriate policy changes. Ensure that the analysis accounts for the sentiments and risks previously identified, and provide a detailed report on strategic recommendations.";

pub fn forecasting_instance() -> RoutingInstance {
    let bank = Arc::new(common::forecasting_agents());
    let pool = CandidatePool::new(
        bank,
        [
            "risk_management_agent",
            "economy_forecasting_agent",
            "code_review_agent",
            "sentiment_analysis_trading_agent",
        ],
    )
    .unwrap();
    let history = vec![
        Turn::observation("Initiate a comprehensive code review of the backend systems located at the server path \"/var/www/backend\" using PHP as the primary language. ..."),
        Turn::action(
            "<think>...</think>",
            vec![CandidateCall::new(
                "code_review_agent",
                json!({"repo_path": "/var/www/backend", "language": "PHP", "review_criteria": "Performance optimization and best practices adherence", "report_format": "markdown"}),
                "...",
            )],
            Some("## Code Review Report ...".into()),
        ),
        Turn::observation("I would like to proceed with an analysis of sentiment in the trading data for our company's stocks, symbolized as \"COMP\", ..."),
        Turn::action(
            "<think>...</think>",
            vec![
                CandidateCall::new(
                    "sentiment_analysis_trading_agent",
                    json!({"market_symbols": ["COMP"], "timeframe": "intraday", "sentiment_threshold": 0.7, "data_source": "auto"}),
                    "...",
                ),
                CandidateCall::new(
                    "risk_management_agent",
                    json!({"user_instruction": "Evaluate financial risks ...", "llm_model": "default", "risk_tolerance": "medium"}),
                    "...",
                ),
            ],
            Some("The sentiment analysis for \"COMP\" indicates ...".into()),
        ),
    ];
    RoutingInstance {
        query: FORECAST_QUERY.into(),
        history,
        pool,
        label: "economy_forecasting_agent".into(),
        origin: InstanceOrigin {
            trajectory_id: "forecast".into(),
            step: 2,
            call: 0,
        },
        group: "Finance".into(),
    }
}

fn rendered_format_fidelity() -> Outcome {
    let instance = forecasting_instance();
    let sample = render_sample(&instance).map_err(|e| e.to_string())?;
    ensure(sample.system == AGENT_ROUTER_SYSTEM, || {
        format!("system prompt differs:\n{}", sample.system)
    })?;
    ensure(
        sample
            .system
            .contains("5. Output strictly in the required format: [\"agent_name\"], no extra commentary."),
        || "output-format sentence missing".into(),
    )?;
    let user = &sample.user;
    let required = [
        "Below are examples of the user's past interactions, including queries and system responses:\n<history>\nUser: Initiate a comprehensive code review",
        "Assistant: <think>...</think>\n<agent_call>code_review_agent{\"repo_path\": \"/var/www/backend\", \"language\": \"PHP\", \"review_criteria\": \"Performance optimization and best practices adherence\", \"report_format\": \"markdown\"}</agent_call>",
        "<agent_call>sentiment_analysis_trading_agent{\"market_symbols\": [\"COMP\"], \"timeframe\": \"intraday\", \"sentiment_threshold\": 0.7, \"data_source\": \"auto\"}</agent_call>\n<agent_call>risk_management_agent{",
        "Assistant: ## Code Review Report ...\n\nUser: I would like to proceed",
        "Assistant: The sentiment analysis for \"COMP\" indicates ...\n</history>",
        "\n\nCurrent user query:\n<current query>\"Please execute a financial forecast",
        "strategic recommendations.\"</current query>\n\nAvailable agents:\n<agents>[",
    ];
    for part in required {
        ensure(user.contains(part), || format!("user text lacks {part:?}"))?;
    }
    ensure(user.ends_with(&format!("]</agents>\n\n{AGENT_ROUTER_TAIL}")), || {
        "task and output blocks differ".into()
    })?;
    let pool_text = &user[user.find("<agents>").unwrap()..user.find("</agents>").unwrap()];
    ensure(pool_text.contains("\"name\": \"economy_forecasting_agent\""), || {
        "label missing from pool block".into()
    })?;
    ensure(sample.expected == vec!["economy_forecasting_agent".to_string()], || {
        "expected label differs".into()
    })?;
    let record = DatasetRecord::from_instance(&instance)
        .map_err(|e| e.to_string())?
        .to_value();
    ensure(record["expected_agent"] == json!(["economy_forecasting_agent"]), || {
        "expected_agent field differs".into()
    })?;
    let reply = "<think>\nThe query asks for an economic forecast building on earlier risk work.\n</think>\n\n[\"economy_forecasting_agent\"]";
    ensure(
        parse_decision(reply, &instance.pool).as_deref() == Ok("economy_forecasting_agent"),
        || "reply did not round-trip".into(),
    )?;
    ensure(
        parse_decision(
            "<think>reasoning</think>\n[\"economy_forecasting_agent\"]",
            &instance.pool,
        )
        .is_ok(),
        || "compact reply did not round-trip".into(),
    )?;
    Ok("system prompt exact, history/query/pool blocks present, reply format round-trips".into())
}

fn random_instances(n: usize, pool_size: usize, seed: u64) -> Vec<RoutingInstance> {
    let bank = Arc::new(common::numbered_bank("item", 200));
    let names: Vec<String> = bank.names().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let members: Vec<String> = names.choose_multiple(&mut rng, pool_size).cloned().collect();
            let label = members.choose(&mut rng).unwrap().clone();
            RoutingInstance {
                query: format!("query {i}"),
                history: Vec::new(),
                pool: CandidatePool::new(bank.clone(), members).unwrap(),
                label,
                origin: InstanceOrigin {
                    trajectory_id: format!("r{i}"),
                    step: 0,
                    call: 0,
                },
                group: "all".into(),
            }
        })
        .collect()
}

fn pipeline_config(seed: u64, subsets: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: Some(seed),
        ..PipelineConfig::default()
    };
    cfg.sampler.subsets = subsets;
    cfg.evaluation.k = 5;
    cfg.evaluation.settings = PoolSetting::ALL.to_vec();
    cfg
}

fn router_properties() -> Outcome {
    let mut cfg = pipeline_config(5, 30);
    cfg.evaluation.routers = vec![RouterVariant::Oracle];
    let external = Arc::new(common::numbered_bank("external", 30));
    let run = run_pipeline(&common::seed_bank(), Some(external), &cfg, Arc::new(Gateway::mock(5)))
        .map_err(|e| e.to_string())?;
    for entry in &run.evaluations {
        ensure(entry.evaluation.metrics.avg_at_k == 1.0, || {
            format!(
                "oracle scored {} under {}",
                entry.evaluation.metrics.avg_at_k, entry.setting
            )
        })?;
    }
    ensure(run.evaluations.len() == 4, || {
        "not all four settings were evaluated".into()
    })?;

    let instances = random_instances(1000, 10, 17);
    let builder = PoolBuilder::new(PoolSources::default());
    let random = evaluate(&RandomRouter, &instances, PoolSetting::Clean, &builder, 5, 23).map_err(|e| e.to_string())?;
    let acc = random.metrics.avg_at_k;
    ensure((acc - 0.10).abs() <= 0.03, || format!("random avg@5 = {acc:.4}"))?;

    let (q_choice, qh_choice) = divergence_case();
    ensure(
        q_choice.as_deref() == Some("general_helper") && qh_choice.as_deref() == Some("orbital_telemetry_decoder"),
        || format!("q chose {q_choice:?}, q+h chose {qh_choice:?}"),
    )?;
    Ok(format!(
        "oracle avg@5 = 1.0 under 4 settings ({} instances), random avg@5 = {acc:.4}, Q and Q+H diverge",
        run.dataset.len()
    ))
}

/// Generic query, history naming the decoder's capability.
fn divergence_case() -> (Option<String>, Option<String>) {
    let bank = Arc::new(
        CandidateBank::from_specs(
            CandidateKind::Tool,
            [
                common::tool(
                    "general_helper",
                    "Helps with the current request and answers questions.",
                    &[],
                    &[],
                ),
                common::tool(
                    "orbital_telemetry_decoder",
                    "Decodes orbital telemetry frames sent by satellites.",
                    &[],
                    &[],
                ),
            ],
        )
        .unwrap(),
    );
    let pool = CandidatePool::whole_bank(bank).unwrap();
    let history = vec![
        Turn::observation("Our satellites sent new orbital telemetry frames; decode the telemetry frames."),
        Turn::action(
            "<think>decode</think>",
            vec![CandidateCall::new(
                "orbital_telemetry_decoder",
                json!({"frames": "orbital telemetry"}),
                "decoded telemetry frames",
            )],
            Some("Decoded the orbital telemetry frames from the satellites.".into()),
        ),
    ];
    let query = "Please help with the current request.";
    let gateway = Arc::new(Gateway::mock(3));
    let request = RouteRequest {
        query,
        history: &history,
        pool: &pool,
        label: None,
        seed: 0,
    };
    let q = EmbeddingRouter::new(gateway.clone(), EmbeddingMode::Query, 8192).route(&request);
    let qh = EmbeddingRouter::new(gateway, EmbeddingMode::QueryHistory, 8192).route(&request);
    (q.chosen, qh.chosen)
}

/// Independent legality check: replays turn events in order.
fn replay_legal(log: &EpisodeLog) -> bool {
    let mut last: Option<String> = None;
    let mut consumed: HashMap<usize, usize> = HashMap::new();
    for turn in &log.turns {
        match &turn.event {
            TurnEvent::Routed { step } => last = log.steps[*step].decision.chosen.clone(),
            TurnEvent::Executed { step } => {
                let i = consumed.entry(*step).or_default();
                let Some(exec) = log.steps[*step].executions.get(*i) else {
                    return false;
                };
                *i += 1;
                if last.as_deref() != Some(exec.candidate.as_str()) {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}

fn lra_context_bound() -> Outcome {
    let bank = Arc::new(common::numbered_bank("catalog", 2005));
    let small = CandidatePool::new(bank.clone(), bank.names().take(10).map(str::to_string)).unwrap();
    let large = CandidatePool::whole_bank(bank).unwrap();
    ensure(large.len() == 2005, || "large pool is not 2,005".into())?;
    let gateway = Gateway::mock(8);
    let reasoner = LlmReasoner::new(&gateway, "mock", 0.0);
    let binding = ExecutorBinding::uniform(ExecutorEndpoint::Mock);
    let table: HashMap<String, String> = (0..6)
        .map(|i| (format!("need {i}"), format!("catalog_{:04}", i + 1)))
        .collect();
    let router = OracleRouter::with_table(table);
    let tasks = ["need 0", "need 1; need 2", "need 3; need 4; need 5"];
    for (t, task) in tasks.iter().enumerate() {
        let cfg = EpisodeConfig {
            max_steps: 12,
            seed: t as u64,
        };
        let a = run_episode(task, &small, &router, &binding, &reasoner, &cfg).map_err(|e| e.to_string())?;
        let b = run_episode(task, &large, &router, &binding, &reasoner, &cfg).map_err(|e| e.to_string())?;
        for log in [&a, &b] {
            ensure(log.is_finished(), || {
                format!("episode {t} did not finish: {:?}", log.outcome)
            })?;
            ensure(log.context_audit.tool_spec_count == 2, || {
                format!("{} tool specs", log.context_audit.tool_spec_count)
            })?;
            ensure(log.context_audit.catalog_entries_in_prompt == 0, || {
                "catalog entries leaked into the prompt".into()
            })?;
        }
        let sizes = |l: &EpisodeLog| l.turns.iter().map(|t| t.prompt_chars).collect::<Vec<_>>();
        ensure(sizes(&a) == sizes(&b), || {
            format!("episode {t}: prompt sizes depend on pool size")
        })?;
        ensure(a.context_audit == b.context_audit, || {
            format!("episode {t}: audits differ")
        })?;
    }

    let pool = CandidatePool::new(
        Arc::new(common::numbered_bank("exec", 10)),
        (0..10).map(|i| format!("exec_{i:04}")),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut illegal_attempts = 0;
    for e in 0..100 {
        let len = rng.random_range(1..12);
        let script: Vec<String> = (0..len)
            .map(|i| match rng.random_range(0..3) {
                0 => ScriptedReasoner::route(&format!("need {e}-{i}")),
                _ => ScriptedReasoner::execute(json!({"query": format!("a{i}")})),
            })
            .collect();
        let reasoner = ScriptedReasoner::new(script);
        let router: Box<dyn Router> = if e % 4 == 0 {
            Box::new(OracleRouter::new())
        } else {
            Box::new(RandomRouter)
        };
        let cfg = EpisodeConfig { max_steps: 16, seed: e };
        let log =
            run_episode("scripted", &pool, router.as_ref(), &binding, &reasoner, &cfg).map_err(|e| e.to_string())?;
        log.check_legality()?;
        ensure(replay_legal(&log), || {
            format!("episode {e}: replay found an illegal execution")
        })?;
        illegal_attempts += log.execute_before_route_count();
    }
    Ok(format!(
        "2 tool specs and 0 catalog entries at 10 and 2,005, identical prompt sizes; 100 scripted episodes legal ({illegal_attempts} blocked executions)"
    ))
}

fn robustness_mechanics() -> Outcome {
    let server_a = common::numbered_bank("srva", 30);
    let server_b = common::numbered_bank("srvb", 30);
    let mutants = common::numbered_bank("mut", 20);
    let external = common::numbered_bank("ext", 25);
    let union = Arc::new(
        server_a
            .merged(&server_b)
            .unwrap()
            .merged(&mutants)
            .unwrap()
            .merged(&external)
            .unwrap(),
    );
    let sources = PoolSources {
        server_banks: vec![Arc::new(server_a), Arc::new(server_b)],
        mutants: Some(Arc::new(mutants)),
        external: Some(Arc::new(external)),
    };
    let builder = PoolBuilder::new(sources);
    let names: Vec<String> = union.names().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut instances = Vec::new();
    for case in 0..1000 {
        let size = rng.random_range(1..=12);
        let mut members: Vec<String> = names.choose_multiple(&mut rng, size).cloned().collect();
        members.shuffle(&mut rng);
        let label = members.choose(&mut rng).unwrap().clone();
        let base = CandidatePool::new(union.clone(), members).unwrap();
        let mut previous: Option<CandidatePool> = None;
        for setting in PoolSetting::ALL {
            let pool = builder
                .build_for(&base, &label, setting)
                .map_err(|e| format!("case {case}: {e}"))?;
            if let Some(prev) = &previous {
                ensure(prev.members().iter().all(|m| pool.contains(m)), || {
                    format!("case {case}: {setting} dropped members")
                })?;
            }
            previous = Some(pool);
        }
        if case < 200 {
            instances.push(RoutingInstance {
                query: format!("case {case}"),
                history: Vec::new(),
                pool: base,
                label,
                origin: InstanceOrigin {
                    trajectory_id: format!("c{case}"),
                    step: 0,
                    call: 0,
                },
                group: "all".into(),
            });
        }
    }
    for setting in PoolSetting::ALL {
        let e = evaluate(&OracleRouter::new(), &instances, setting, &builder, 5, 1).map_err(|e| e.to_string())?;
        ensure(e.metrics.avg_at_k == 1.0, || {
            format!("oracle scored {} under {setting}", e.metrics.avg_at_k)
        })?;
    }
    Ok("1,000 fuzzed pools nest Clean to +External with zero evictions; oracle 1.0 in every setting".into())
}

fn end_to_end_pipeline() -> Outcome {
    let start = Instant::now();
    let mut cfg = pipeline_config(7, 100);
    cfg.evaluation.routers = vec![
        RouterVariant::Oracle,
        RouterVariant::EmbeddingQ,
        RouterVariant::EmbeddingQh,
    ];
    let external = Arc::new(common::numbered_bank("external", 40));
    let first = run_pipeline(
        &common::seed_bank(),
        Some(external.clone()),
        &cfg,
        Arc::new(Gateway::mock(7)),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let second = run_pipeline(&common::seed_bank(), Some(external), &cfg, Arc::new(Gateway::mock(7)))
        .map_err(|e| e.to_string())?;
    ensure(first.evolved.accepted() == 40, || {
        format!("{} mutations accepted", first.evolved.accepted())
    })?;
    ensure(first.synthesis.trajectories.len() == 100, || {
        format!("{} trajectories synthesized", first.synthesis.trajectories.len())
    })?;
    let recount: usize = first.synthesis.trajectories.iter().map(recount_calls).sum();
    ensure(first.dataset.len() == recount, || {
        format!("dataset has {} records, recount {recount}", first.dataset.len())
    })?;
    ensure(first.evaluations.len() == 12, || {
        "not every router and setting was evaluated".into()
    })?;
    let runs = |r: &graphroute_core::pipeline::PipelineRun| {
        render_runs(
            &r.evaluations
                .iter()
                .flat_map(|e| e.evaluation.runs.clone())
                .collect::<Vec<_>>(),
        )
    };
    ensure(
        render_records(&first.dataset.records) == render_records(&second.dataset.records),
        || "datasets differ across reruns".into(),
    )?;
    ensure(runs(&first) == runs(&second), || "results differ across reruns".into())?;
    ensure(first.report == second.report, || "reports differ across reruns".into())?;
    ensure(elapsed < Duration::from_secs(300), || {
        format!("pipeline took {}", secs(elapsed))
    })?;
    println!("{}", first.report.render_text().trim_end());
    Ok(format!(
        "{} trajectories, {} instances, 12 evaluations in {}, reruns identical",
        first.synthesis.trajectories.len(),
        first.dataset.len(),
        secs(elapsed)
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("graph oracle equivalence", graph_oracle_equivalence),
        ("threshold semantics", threshold_semantics),
        ("mutation forest", mutation_forest),
        ("supervision correctness", supervision_correctness),
        ("rendered-format fidelity", rendered_format_fidelity),
        ("router properties", router_properties),
        ("light routing agent context bound", lra_context_bound),
        ("robustness-protocol mechanics", robustness_mechanics),
        ("end-to-end mock pipeline", end_to_end_pipeline),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
