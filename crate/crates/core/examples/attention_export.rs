//! Trains briefly, then exports one dialog's head-averaged last-layer turn
//! attention as CSV and checks the causal structure.
//!
//! cargo run --release --example attention_export -- [out.csv]

use cabert_slu::data::{generate_synthetic, Dependency, LabelSets};
use cabert_slu::train::{attention_csv, export_attention, train, RunConfig};

fn main() -> cabert_slu::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "attention.csv".to_string());
    let dialogs = generate_synthetic(2, 40, Dependency::Deterministic);
    let labels = LabelSets::from_dialogs(&dialogs)?;
    let config = RunConfig {
        epochs: 3,
        seed: 2,
        ..RunConfig::default()
    };
    let outcome = train(&config, &labels, &dialogs[..32], &dialogs[32..])?;
    let dialog = &dialogs[35];
    let matrix = export_attention(&outcome.best, dialog)?;
    std::fs::write(&out, attention_csv(&matrix))?;

    let t = dialog.turns.len();
    for q in 0..t {
        let row = &matrix.data()[q * t..(q + 1) * t];
        assert!(row[q + 1..].iter().all(|&w| w == 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cells: Vec<String> = row.iter().map(|w| format!("{w:.3}")).collect();
        println!("{:<40} {}", dialog.turns[q].tokens.join(" "), cells.join(" "));
    }
    println!("{t}x{t} matrix written to {out}");
    Ok(())
}
