//! Generates a synthetic corpus, writes it as JSONL and prints one dialog.
//!
//! cargo run --release --example synthetic_corpus -- [out.jsonl] [seed] [dialogs]

use cabert_slu::data::{generate_synthetic, load_corpus, write_corpus, Dependency};

fn main() -> cabert_slu::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic.jsonl".to_string());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let dialogs = generate_synthetic(seed, n, Dependency::Deterministic);
    write_corpus(&out, &dialogs)?;
    let corpus = load_corpus(&out)?;
    println!("{} dialogs written to {out}", corpus.dialogs.len());
    println!("acts: {}", corpus.labels.acts.join(" "));
    println!("tags: {}", corpus.labels.slot_tags.join(" "));
    for turn in &corpus.dialogs[0].turns {
        println!(
            "{:<7} {:<40} {:<18} {}",
            turn.speaker.as_str(),
            turn.tokens.join(" "),
            turn.acts.join(","),
            turn.tags.join(" ")
        );
    }
    Ok(())
}
