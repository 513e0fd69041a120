//! Trains the full model and the no-context ablation (no fusion, no global
//! LSTM) on history-dependent synthetic dialogs and compares test accuracy.
//!
//! cargo run --release --example context_advantage -- [epochs] [seed]

use cabert_slu::data::{generate_synthetic, Dependency, LabelSets};
use cabert_slu::model::Components;
use cabert_slu::train::{evaluate, train, RunConfig};

fn main() -> cabert_slu::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let dialogs = generate_synthetic(seed, 500, Dependency::Deterministic);
    let labels = LabelSets::from_dialogs(&dialogs)?;
    let (train_set, test_set) = dialogs.split_at(400);

    let variants = [
        ("full", Components::FULL),
        ("no context", Components::parse_enabled("sa")?),
    ];
    for (name, components) in variants {
        let mut config = RunConfig {
            epochs,
            seed,
            batch_size: 8,
            ..RunConfig::default()
        };
        config.set_components(components);
        let start = std::time::Instant::now();
        let outcome = train(&config, &labels, train_set, train_set)?;
        let report = evaluate(&outcome.best, test_set)?;
        println!(
            "{name:<12} test id_acc {:.4}  id_f1 {:.4}  sl_f1 {:.4}  best epoch {}  ({:.0}s)",
            report.id_acc,
            report.id_f1,
            report.sl_f1,
            outcome.best.epoch,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
