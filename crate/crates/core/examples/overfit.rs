//! Memorizes eight synthetic dialogs with the desk preset and reports
//! training-set metrics.
//!
//! cargo run --release --example overfit -- [epochs]

use cabert_slu::data::{generate_synthetic, Dependency, LabelSets};
use cabert_slu::train::{evaluate, train_with, RunConfig};

fn main() -> cabert_slu::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let dialogs = generate_synthetic(7, 8, Dependency::Deterministic);
    let labels = LabelSets::from_dialogs(&dialogs)?;
    let config = RunConfig {
        epochs,
        seed: 7,
        ..RunConfig::default()
    };
    let start = std::time::Instant::now();
    let outcome = train_with(&config, &labels, &dialogs, &dialogs, |r| {
        if r.epoch < 10 || r.epoch % 25 == 0 {
            println!("epoch {:>3}  loss {:.6}  train id_acc {:.3}", r.epoch, r.train_loss, r.valid_id_acc);
        }
    })?;
    let report = evaluate(&outcome.last, &dialogs)?;
    println!(
        "final: id_acc {:.4}  id_f1 {:.4}  sl_f1 {:.4}  ({:.1}s)",
        report.id_acc,
        report.id_f1,
        report.sl_f1,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
