//! Synthetic fixtures shared by the benchmarks.

use graphroute_core::registry::{validate_spec, CandidateBank, CandidateKind};
use serde_json::json;

const WORDS: [&str; 24] = [
    "fetch", "weather", "stock", "price", "report", "city", "forecast", "invoice", "flight", "hotel", "code", "issue",
    "deploy", "alert", "sensor", "energy", "order", "parcel", "route", "music", "image", "email", "calendar", "search",
];

/// `n` tools whose descriptions draw on a small shared vocabulary, so that
/// neighbouring entries overlap and the graph has edges.
pub fn synthetic_bank(n: usize) -> CandidateBank {
    let specs = (0..n).map(|i| {
        let words: Vec<&str> = (0..8)
            .map(|j| WORDS[(i / 4 * 7 + j * 3 + (i % 4) * (j % 2)) % WORDS.len()])
            .collect();
        let doc = json!({
            "name": format!("tool_{i:05}"),
            "description": words.join(" "),
            "inputSchema": {
                "type": "object",
                "properties": {"query": {"type": "string", "description": "Lookup text"}},
                "required": ["query"]
            },
        });
        validate_spec(&doc, CandidateKind::Tool).expect("valid synthetic tool")
    });
    CandidateBank::from_specs(CandidateKind::Tool, specs).expect("unique names")
}
