//! Scores hand-written predictions and prints the report as JSON.
//!
//! cargo run --release --example metrics_report

use cabert_slu::metrics::{extract_spans, EvalReport};

fn v(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn main() -> cabert_slu::Result<()> {
    let gold_acts = [v(&["Inform", "Request"]), v(&["Offer"]), v(&["Select"])];
    let pred_acts = [v(&["Request", "Inform"]), v(&["Offer"]), v(&["Affirm"])];
    let gold_tags = [
        v(&["O", "O"]),
        v(&["O", "O", "B-name", "I-name", "O"]),
        v(&["O", "B-name", "I-name"]),
    ];
    let pred_tags = [
        v(&["O", "O"]),
        v(&["O", "O", "B-name", "O", "O"]),
        v(&["O", "I-name", "I-name"]),
    ];
    for tags in &pred_tags {
        println!("{:?} -> {:?}", tags, extract_spans(tags)?);
    }
    let report = EvalReport::compute(&pred_acts, &gold_acts, &pred_tags, &gold_tags)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
