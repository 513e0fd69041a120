//! Mean test ID accuracy of the ablation lattice over several seeds.
//!
//! cargo run --release --example ablation -- [epochs] [seeds] [variants]
//!
//! `variants` is a `;`-separated list of enabled-component lists, for
//! example `none;lstm;sa,lstm;sa,cf;sa,cf,lstm` for every row.

use cabert_slu::data::{generate_synthetic, Dependency, LabelSets};
use cabert_slu::model::Components;
use cabert_slu::train::{evaluate, train, RunConfig};

fn main() -> cabert_slu::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let variants = args.next().unwrap_or_else(|| "none;lstm;sa,cf,lstm".to_string());

    for variant in variants.split(';') {
        let components = Components::parse_enabled(variant)?;
        let mut accs = Vec::new();
        for seed in 0..seeds {
            let dialogs = generate_synthetic(seed, 500, Dependency::Deterministic);
            let labels = LabelSets::from_dialogs(&dialogs)?;
            let (train_set, test_set) = dialogs.split_at(400);
            let mut config = RunConfig {
                epochs,
                seed,
                batch_size: 8,
                ..RunConfig::default()
            };
            config.set_components(components);
            let outcome = train(&config, &labels, train_set, train_set)?;
            accs.push(evaluate(&outcome.best, test_set)?.id_acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let runs: Vec<String> = accs.iter().map(|a| format!("{a:.4}")).collect();
        println!("{:<12} mean id_acc {mean:.4}  runs [{}]", components.label(), runs.join(", "));
    }
    Ok(())
}
