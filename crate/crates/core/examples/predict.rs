//! Trains on synthetic dialogs, then annotates raw-text dialogs that carry
//! no labels.
//!
//! cargo run --release --example predict

use cabert_slu::data::{generate_synthetic, Dependency, Dialog, LabelSets, DEFAULT_MAX_TURNS};
use cabert_slu::train::{annotate, train, RunConfig};

const INPUT: &str = r#"{"id":"raw-1","turns":[
 {"speaker":"user","text":"I need a place in the north."},
 {"speaker":"system","text":"What about Blue Door?"},
 {"speaker":"user","text":"Yes, that works for Blue Door."},
 {"speaker":"system","text":"What about Blue Door?"},
 {"speaker":"user","text":"Yes, that works for Blue Door."}]}"#;

fn main() -> cabert_slu::Result<()> {
    let dialogs = generate_synthetic(3, 120, Dependency::Deterministic);
    let labels = LabelSets::from_dialogs(&dialogs)?;
    let config = RunConfig {
        epochs: 4,
        seed: 3,
        batch_size: 8,
        ..RunConfig::default()
    };
    let outcome = train(&config, &labels, &dialogs[..100], &dialogs[100..])?;

    let line = INPUT.replace('\n', "");
    let value: serde_json::Value = serde_json::from_str(&line)?;
    let dialog = Dialog::from_json(&line, false, DEFAULT_MAX_TURNS)?;
    for annotated in annotate(&outcome.best, &[(value, dialog)])? {
        for turn in annotated["turns"].as_array().into_iter().flatten() {
            println!("{:<36} {:<10} {}", turn["text"].as_str().unwrap_or(""), turn["acts"], turn["tags"]);
        }
    }
    Ok(())
}
