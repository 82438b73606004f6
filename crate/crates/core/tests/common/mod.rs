#![allow(dead_code)]

use std::sync::Arc;

use graphroute_core::registry::{validate_spec, CandidateBank, CandidateKind, CandidateSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn tool_doc(name: &str, description: &str, params: &[(&str, &str)], tags: &[&str]) -> Value {
    let properties: serde_json::Map<String, Value> = params
        .iter()
        .map(|(p, t)| {
            (
                (*p).to_string(),
                json!({"type": t, "description": format!("The {} value", p.replace('_', " "))}),
            )
        })
        .collect();
    let required: Vec<&str> = params.iter().take(1).map(|(p, _)| *p).collect();
    json!({
        "name": name,
        "description": description,
        "inputSchema": {"type": "object", "properties": properties, "required": required},
        "tags": tags,
    })
}

pub fn tool(name: &str, description: &str, params: &[(&str, &str)], tags: &[&str]) -> CandidateSpec {
    validate_spec(&tool_doc(name, description, params, tags), CandidateKind::Tool).expect("valid tool document")
}

const SEED_TOOLS: [(&str, &str, &str); 20] = [
    (
        "stock_quote",
        "Returns the latest trading price and volume for a stock ticker symbol.",
        "finance",
    ),
    (
        "portfolio_summary",
        "Summarizes holdings, allocation and gains for an investment portfolio.",
        "finance",
    ),
    (
        "currency_convert",
        "Converts an amount between two currencies using current exchange rates.",
        "finance",
    ),
    (
        "loan_calculator",
        "Computes monthly payments and total interest for a loan.",
        "finance",
    ),
    (
        "invoice_create",
        "Creates a customer invoice with line items and a due date.",
        "finance",
    ),
    (
        "weather_forecast",
        "Gives the hourly weather forecast for a city over the next days.",
        "weather",
    ),
    (
        "air_quality",
        "Reports the air quality index and pollutant levels for a location.",
        "weather",
    ),
    (
        "storm_alerts",
        "Lists active severe storm warnings for a region.",
        "weather",
    ),
    (
        "uv_index",
        "Returns the ultraviolet index forecast for a location.",
        "weather",
    ),
    (
        "tide_times",
        "Lists high and low tide times for a coastal station.",
        "weather",
    ),
    (
        "flight_search",
        "Searches flights between two airports on a travel date.",
        "travel",
    ),
    (
        "hotel_booking",
        "Books a hotel room for given check-in and check-out dates.",
        "travel",
    ),
    (
        "train_schedule",
        "Shows train departures between two stations.",
        "travel",
    ),
    (
        "visa_requirements",
        "Explains visa requirements for a passport holder visiting a country.",
        "travel",
    ),
    (
        "car_rental",
        "Finds rental cars available at a pickup location.",
        "travel",
    ),
    (
        "repo_search",
        "Searches source code across repositories for a pattern.",
        "dev",
    ),
    (
        "run_tests",
        "Runs the test suite of a project and reports failures.",
        "dev",
    ),
    (
        "open_issue",
        "Opens a new issue in a project tracker with a title and body.",
        "dev",
    ),
    (
        "lint_code",
        "Checks source files for style problems and common bugs.",
        "dev",
    ),
    (
        "deploy_service",
        "Deploys a service build to a target environment.",
        "dev",
    ),
];

/// Twenty tools over four domains, each with a required string and an optional integer.
pub fn seed_bank() -> CandidateBank {
    let specs = SEED_TOOLS
        .iter()
        .map(|(name, description, tag)| tool(name, description, &[("query", "string"), ("limit", "integer")], &[tag]));
    CandidateBank::from_specs(CandidateKind::Tool, specs).unwrap()
}

const WORDS: [&str; 48] = [
    "fetch",
    "weather",
    "stock",
    "price",
    "report",
    "city",
    "daily",
    "forecast",
    "summary",
    "invoice",
    "travel",
    "flight",
    "hotel",
    "booking",
    "code",
    "repository",
    "issue",
    "deploy",
    "alert",
    "metric",
    "sensor",
    "battery",
    "energy",
    "grid",
    "customer",
    "order",
    "shipment",
    "parcel",
    "route",
    "map",
    "traffic",
    "music",
    "playlist",
    "video",
    "image",
    "caption",
    "translate",
    "language",
    "email",
    "calendar",
    "meeting",
    "reminder",
    "note",
    "document",
    "search",
    "index",
    "archive",
    "backup",
];

/// `families * variants` tools; variants of one family share most words.
pub fn family_bank(families: usize, variants: usize, seed: u64) -> CandidateBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::new();
    for f in 0..families {
        let base: Vec<&str> = (0..10).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        for v in 0..variants {
            let mut words = base.clone();
            for _ in 0..rng.random_range(0..4) {
                let at = rng.random_range(0..words.len());
                words[at] = WORDS.choose(&mut rng).unwrap();
            }
            specs.push(tool(
                &format!("family{f:03}_v{v}"),
                &words.join(" "),
                &[("query", "string")],
                &["synthetic"],
            ));
        }
    }
    CandidateBank::from_specs(CandidateKind::Tool, specs).unwrap()
}

/// `n` distinct tools named `prefix_NNNN`.
pub fn numbered_bank(prefix: &str, n: usize) -> CandidateBank {
    let specs = (0..n).map(|i| {
        tool(
            &format!("{prefix}_{i:04}"),
            &format!("Handles catalog item {i} for the {prefix} service."),
            &[("query", "string")],
            &[prefix],
        )
    });
    CandidateBank::from_specs(CandidateKind::Tool, specs).unwrap()
}

pub fn arc(bank: CandidateBank) -> Arc<CandidateBank> {
    Arc::new(bank)
}

pub fn agent(name: &str, description: &str, tools: &[&str], params: &[(&str, &str)], tags: &[&str]) -> CandidateSpec {
    let properties: serde_json::Map<String, Value> = params
        .iter()
        .map(|(p, t)| {
            (
                (*p).to_string(),
                json!({"type": t, "description": format!("The {}", p.replace('_', " "))}),
            )
        })
        .collect();
    let doc = json!({
        "name": name,
        "description": description,
        "tools": tools,
        "inputSchema": {"type": "object", "properties": properties, "required": []},
        "tags": tags,
    });
    validate_spec(&doc, CandidateKind::Agent).expect("valid agent document")
}

/// The four agents appearing in the economy forecasting routing example.
pub fn forecasting_agents() -> CandidateBank {
    let specs = vec![
        agent(
            "code_review_agent",
            "Reviews a code repository for performance and best-practice issues and writes a report.",
            &["scan_repo", "review_code", "write_report"],
            &[("repo_path", "string"), ("language", "string"), ("review_criteria", "string"), ("report_format", "string")],
            &["Development"],
        ),
        agent(
            "sentiment_analysis_trading_agent",
            "Analyzes market sentiment for traded symbols over a timeframe.",
            &["collect_posts", "score_sentiment", "aggregate_signals"],
            &[("market_symbols", "array"), ("timeframe", "string"), ("sentiment_threshold", "number"), ("data_source", "string")],
            &["Finance"],
        ),
        agent(
            "risk_management_agent",
            "The Risk Management Agent specializes in evaluating financial risks based on historical data and current market conditions, providing targeted risk mitigation strategies and recommendations.",
            &["parse_risk_instruction", "plan_risk_analysis", "generate_risk_model", "execute_risk_assessment", "validate_risk_strategies"],
            &[("user_instruction", "string"), ("spreadsheet_id", "string"), ("llm_model", "string"), ("risk_tolerance", "string")],
            &["Finance"],
        ),
        agent(
            "economy_forecasting_agent",
            "An agent designed to forecast economic trends and guide policy recommendations by simulating various economic scenarios and assessing potential outcomes.",
            &["simulate_economic_scenario", "forecast_trends", "recommend_policy", "analyze_impact"],
            &[("economic_indicators", "object"), ("forecast_horizon", "integer"), ("policy_options", "object"), ("evaluation_criteria", "object")],
            &["Finance"],
        ),
    ];
    CandidateBank::from_specs(CandidateKind::Agent, specs).unwrap()
}
