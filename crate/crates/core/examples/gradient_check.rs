//! Compares backpropagated gradients of every parameter group with central
//! finite differences on a small full model.
//!
//! cargo run --release --example gradient_check

use cabert_slu::data::{generate_synthetic, Batch, Dependency, LabelSets, Vocab};
use cabert_slu::model::{CabertSlu, ModelConfig};
use cabert_slu::tensor::gradcheck::{check_store, DEFAULT_STEP};

fn main() -> cabert_slu::Result<()> {
    let mut dialogs = generate_synthetic(1, 1, Dependency::Deterministic);
    dialogs[0].turns.truncate(3);
    for t in &mut dialogs[0].turns {
        t.tokens.truncate(2);
        t.tags.truncate(2);
    }
    let vocab = Vocab::build(&dialogs, 1);
    let labels = LabelSets::from_dialogs(&dialogs)?;
    let batch = Batch::from_dialogs(&[&dialogs[0]], &vocab, &labels, 4)?;

    let mut model = CabertSlu::new(ModelConfig::tiny(vocab.len()), labels.n_acts(), labels.n_tags(), 0)?;
    model.accumulate_gradients(&batch, false)?;
    let mut store = model.params.clone();
    let reports = check_store(&mut store, DEFAULT_STEP, |_| true, |s| model.loss_with(s, &batch, false))?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!("{:<32} {:>5} values  max rel err {:.2e}", r.name, r.numel, r.max_relative_error);
        worst = worst.max(r.max_relative_error);
    }
    println!("{} groups, worst {:.2e}", reports.len(), worst);
    Ok(())
}
