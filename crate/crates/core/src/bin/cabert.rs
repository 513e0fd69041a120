use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use cabert_slu::data::{self, generate_synthetic, load_corpus_with, load_unlabeled, Dependency, Dialog};
use cabert_slu::model::Components;
use cabert_slu::train::{self, Checkpoint, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "cabert", version, about = "Joint dialog act detection and slot filling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as JSONL.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        dialogs: usize,
        #[arg(long, default_value = "deterministic")]
        dependency: Dependency,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split of a corpus and save the best checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma list of enabled components out of sa, cf, lstm.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an evaluation report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Partition of `data` to score, using the checkpoint's split seed.
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
    /// Annotate dialogs with predicted acts and tags.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the last fusion layer's head-averaged turn attention as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dialog id; the first dialog when absent.
        #[arg(long)]
        dialog: Option<String>,
        /// Standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn select_split(dialogs: Vec<Dialog>, split: SplitArg, seed: u64) -> Vec<Dialog> {
    if split == SplitArg::All {
        return dialogs;
    }
    let parts = data::split_dialogs(&dialogs, seed);
    match split {
        SplitArg::Train => parts.train,
        SplitArg::Valid => parts.valid,
        SplitArg::Test => parts.test,
        SplitArg::All => unreachable!(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    ablation: Option<String>,
    epochs: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(p) = preset {
        cfg.preset = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(list) = ablation {
        cfg.set_components(Components::parse_enabled(&list)?);
    }
    if data.is_some() {
        cfg.data = data;
    }
    if out.is_some() {
        cfg.checkpoint = out;
    }
    cfg.validate()?;
    let Some(data_path) = cfg.data.clone() else {
        bail!("no training data: pass --data or set \"data\" in the config");
    };
    let Some(ckpt_path) = cfg.checkpoint.clone() else {
        bail!("no checkpoint path: pass --out or set \"checkpoint\" in the config");
    };

    let corpus = load_corpus_with(&data_path, cfg.max_turns)
        .with_context(|| format!("loading {}", data_path.display()))?;
    let split = corpus.split(cfg.seed);
    let valid = if split.valid.is_empty() {
        eprintln!("validation split is empty; selecting on the training split");
        split.train.clone()
    } else {
        split.valid
    };
    eprintln!(
        "{} train / {} valid / {} test dialogs, components {}",
        split.train.len(),
        valid.len(),
        split.test.len(),
        cfg.components().label()
    );
    let outcome = train::train_with(&cfg, &corpus.labels, &split.train, &valid, |r| {
        eprintln!("epoch {:>3}  loss {:.6}  valid id_acc {:.4}", r.epoch, r.train_loss, r.valid_id_acc);
    })?;
    outcome.best.save(&ckpt_path)?;
    eprintln!(
        "saved epoch {} (valid id_acc {:.4}) to {}",
        outcome.best.epoch,
        outcome.best.valid_id_acc,
        ckpt_path.display()
    );
    if !split.test.is_empty() {
        println!("{}", train::evaluate(&outcome.best, &split.test)?.to_json());
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenSynthetic {
            seed,
            dialogs,
            dependency,
            out,
        } => {
            let ds = generate_synthetic(seed, dialogs, dependency);
            data::write_corpus(&out, &ds)?;
        }
        Command::Train {
            config,
            data,
            preset,
            seed,
            ablation,
            epochs,
            out,
        } => run_train(config, data, preset, seed, ablation, epochs, out)?,
        Command::Eval {
            checkpoint,
            data,
            split,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let corpus = load_corpus_with(&data, ckpt.config.max_turns)?;
            let dialogs = select_split(corpus.dialogs, split, ckpt.config.seed);
            println!("{}", train::evaluate(&ckpt, &dialogs)?.to_json());
        }
        Command::Predict {
            checkpoint,
            data,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let inputs = load_unlabeled(&data, ckpt.config.max_turns)?;
            let mut w = output(out.as_ref())?;
            for line in train::annotate(&ckpt, &inputs)? {
                writeln!(w, "{}", serde_json::to_string(&line)?)?;
            }
            w.flush()?;
        }
        Command::ExportAttention {
            checkpoint,
            data,
            dialog,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            // dialog length is checked against the checkpoint's limit below
            let inputs = load_unlabeled(&data, usize::MAX)?;
            let found = match &dialog {
                Some(id) => inputs.into_iter().find(|(_, d)| &d.id == id),
                None => inputs.into_iter().next(),
            };
            let Some((_, d)) = found else {
                bail!("dialog {:?} not found in {}", dialog.unwrap_or_default(), data.display());
            };
            let matrix = train::export_attention(&ckpt, &d)?;
            let mut w = output(out.as_ref())?;
            w.write_all(train::attention_csv(&matrix).as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}
