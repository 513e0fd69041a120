use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{make_batches, Batch, Dialog, LabelSets, Vocab};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{CabertSlu, DialogPrediction};
use crate::tensor::{Adam, AdamConfig, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss over the epoch's batches.
    pub train_loss: f64,
    pub valid_id_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Highest validation ID accuracy, earliest epoch on ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

pub fn train(config: &RunConfig, labels: &LabelSets, train_set: &[Dialog], valid_set: &[Dialog]) -> Result<TrainOutcome> {
    train_with(config, labels, train_set, valid_set, |_| {})
}

/// Trains from scratch, calling `on_epoch` after each epoch.
pub fn train_with(
    config: &RunConfig,
    labels: &LabelSets,
    train_set: &[Dialog],
    valid_set: &[Dialog],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::contract("training and validation sets must be non-empty"));
    }
    labels.covers(train_set)?;
    labels.covers(valid_set)?;
    let vocab = Vocab::build(train_set, config.min_freq);
    let model_config = config.model_config(vocab.len());
    let mut model = CabertSlu::new(model_config, labels.n_acts(), labels.n_tags(), config.seed)?;
    let mut adam = Adam::new(&model.params, AdamConfig::with_learning_rate(config.learning_rate()));

    let snapshot = |model: &CabertSlu, epoch: usize, acc: f64| Checkpoint {
        config: config.clone(),
        model: model.clone(),
        vocab: vocab.clone(),
        labels: labels.clone(),
        epoch,
        valid_id_acc: acc,
    };

    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = make_batches(
            train_set,
            &vocab,
            labels,
            config.batch_size,
            config.max_tokens,
            Some(epoch_seed(config.seed, epoch)),
        )?;
        let mut total = 0.0;
        for batch in &batches {
            model.params.zero_grad();
            total += model.accumulate_gradients(batch, config.intent_only)?;
            model.params.clip_grad_norm(config.grad_clip);
            adam.step(&mut model.params)?;
        }
        let valid_id_acc = score_with(&model, &vocab, labels, config, valid_set)?.id_acc;
        let record = EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            valid_id_acc,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().map_or(true, |b| valid_id_acc > b.valid_id_acc) {
            best = Some(snapshot(&model, epoch, valid_id_acc));
        }
    }
    let last_acc = history.last().map_or(0.0, |r| r.valid_id_acc);
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last: snapshot(&model, config.epochs - 1, last_acc),
        history,
    })
}

fn predict_with(
    model: &CabertSlu,
    vocab: &Vocab,
    labels: &LabelSets,
    config: &RunConfig,
    dialogs: &[Dialog],
) -> Result<Vec<DialogPrediction>> {
    let batches = make_batches(dialogs, vocab, labels, config.batch_size, config.max_tokens, None)?;
    let mut out = Vec::with_capacity(dialogs.len());
    for batch in &batches {
        out.extend(model.predict(batch, labels)?);
    }
    Ok(out)
}

fn score_with(
    model: &CabertSlu,
    vocab: &Vocab,
    labels: &LabelSets,
    config: &RunConfig,
    dialogs: &[Dialog],
) -> Result<EvalReport> {
    if dialogs.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    labels.covers(dialogs)?;
    let preds = predict_with(model, vocab, labels, config, dialogs)?;
    let mut pred_acts = Vec::new();
    let mut pred_tags = Vec::new();
    let mut gold_acts = Vec::new();
    let mut gold_tags = Vec::new();
    for (d, p) in dialogs.iter().zip(preds) {
        for (turn, pt) in d.turns.iter().zip(p.turns) {
            gold_acts.push(turn.acts.clone());
            gold_tags.push(turn.tags.clone());
            pred_acts.push(pt.acts);
            pred_tags.push(pt.tags);
        }
    }
    EvalReport::compute(&pred_acts, &gold_acts, &pred_tags, &gold_tags)
}

/// Scores a checkpoint on labeled dialogs.
pub fn evaluate(checkpoint: &Checkpoint, dialogs: &[Dialog]) -> Result<EvalReport> {
    score_with(&checkpoint.model, &checkpoint.vocab, &checkpoint.labels, &checkpoint.config, dialogs)
}

/// Decoded acts and tags per dialog, in input order.
pub fn predict(checkpoint: &Checkpoint, dialogs: &[Dialog]) -> Result<Vec<DialogPrediction>> {
    if dialogs.is_empty() {
        return Ok(Vec::new());
    }
    predict_with(&checkpoint.model, &checkpoint.vocab, &checkpoint.labels, &checkpoint.config, dialogs)
}

/// Input JSON objects with `acts`, `tags` and `tokens` filled in per turn.
pub fn annotate(checkpoint: &Checkpoint, inputs: &[(Value, Dialog)]) -> Result<Vec<Value>> {
    let dialogs: Vec<Dialog> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let preds = predict(checkpoint, &dialogs)?;
    let mut out = Vec::with_capacity(inputs.len());
    for ((raw, d), p) in inputs.iter().zip(preds) {
        let mut value = raw.clone();
        let turns = value
            .get_mut("turns")
            .and_then(Value::as_array_mut)
            .ok_or_else(|| Error::contract(format!("dialog {:?} has no turns array", d.id)))?;
        for ((turn, parsed), pt) in turns.iter_mut().zip(&d.turns).zip(p.turns) {
            let obj = turn
                .as_object_mut()
                .ok_or_else(|| Error::contract(format!("dialog {:?} has a non-object turn", d.id)))?;
            obj.insert("tokens".into(), serde_json::to_value(&parsed.tokens)?);
            obj.insert("acts".into(), serde_json::to_value(pt.acts)?);
            obj.insert("tags".into(), serde_json::to_value(pt.tags)?);
        }
        out.push(value);
    }
    Ok(out)
}

/// Last-layer turn attention averaged over heads, `[T, T]`.
pub fn export_attention(checkpoint: &Checkpoint, dialog: &Dialog) -> Result<Tensor> {
    let max = checkpoint.config.max_turns;
    if dialog.turns.len() > max {
        return Err(Error::contract(format!(
            "dialog {:?} has {} turns, more than the configured {max}",
            dialog.id,
            dialog.turns.len()
        )));
    }
    let batch = Batch::from_dialogs(&[dialog], &checkpoint.vocab, &checkpoint.labels, checkpoint.config.max_tokens)?;
    Ok(checkpoint.model.turn_attention(&batch)?.remove(0))
}

/// One CSV row per query turn, values in shortest round-trip form.
pub fn attention_csv(matrix: &Tensor) -> String {
    let cols = *matrix.shape().last().unwrap_or(&1);
    let mut out = String::new();
    for row in matrix.data().chunks(cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_attention_csv(text: &str) -> Result<Tensor> {
    let mut rows = 0;
    let mut data = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        for cell in line.split(',') {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::contract(format!("bad attention cell {cell:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows == 0 || data.len() % rows != 0 {
        return Err(Error::contract("attention CSV is empty or ragged"));
    }
    Tensor::new(vec![rows, data.len() / rows], data)
}
