use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::Dialog;
use super::vocab::{LabelSets, Vocab, CLS, PAD, SEP};
use crate::error::{Error, Result};

/// Slot target for positions excluded from the tagging loss (CLS, SEP, PAD
/// and unlabeled tokens).
pub const IGNORE_TAG: usize = usize::MAX;

/// Longest token sequence per turn, CLS and SEP included.
pub const DEFAULT_MAX_TOKENS: usize = 60;

/// Padded arrays for `batch_size` dialogs.
///
/// Token-level arrays are `[B, T, N]` and turn-level arrays `[B, T]`, all
/// flattened row-major. `act_targets` is `[B, T, |acts|]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub dialog_ids: Vec<String>,
    pub batch_size: usize,
    pub max_turns: usize,
    pub max_tokens: usize,
    pub n_acts: usize,
    pub token_ids: Vec<usize>,
    pub token_mask: Vec<bool>,
    pub turn_mask: Vec<bool>,
    pub act_targets: Vec<f64>,
    pub slot_targets: Vec<usize>,
    /// Original word count of each turn before truncation.
    pub word_counts: Vec<usize>,
}

impl Batch {
    /// Builds a single padded batch. Turns are truncated so that CLS, the
    /// kept words and SEP fit in `max_tokens`.
    pub fn from_dialogs(
        dialogs: &[&Dialog],
        vocab: &Vocab,
        labels: &LabelSets,
        max_tokens: usize,
    ) -> Result<Batch> {
        if dialogs.is_empty() {
            return Err(Error::contract("a batch needs at least one dialog"));
        }
        if max_tokens < 2 {
            return Err(Error::contract("max_tokens must leave room for CLS and SEP"));
        }
        let b = dialogs.len();
        let t_max = dialogs.iter().map(|d| d.turns.len()).max().unwrap_or(0);
        if t_max == 0 {
            return Err(Error::contract("dialogs in a batch must have turns"));
        }
        let n_max = dialogs
            .iter()
            .flat_map(|d| d.turns.iter())
            .map(|t| (t.tokens.len() + 2).min(max_tokens))
            .max()
            .unwrap_or(2);
        let n_acts = labels.n_acts();

        let mut batch = Batch {
            dialog_ids: dialogs.iter().map(|d| d.id.clone()).collect(),
            batch_size: b,
            max_turns: t_max,
            max_tokens: n_max,
            n_acts,
            token_ids: vec![PAD; b * t_max * n_max],
            token_mask: vec![false; b * t_max * n_max],
            turn_mask: vec![false; b * t_max],
            act_targets: vec![0.0; b * t_max * n_acts],
            slot_targets: vec![IGNORE_TAG; b * t_max * n_max],
            word_counts: vec![0; b * t_max],
        };

        for (bi, d) in dialogs.iter().enumerate() {
            for (ti, turn) in d.turns.iter().enumerate() {
                let row = bi * t_max + ti;
                batch.turn_mask[row] = true;
                batch.word_counts[row] = turn.tokens.len();
                for act in &turn.acts {
                    batch.act_targets[row * n_acts + labels.act_index(act)?] = 1.0;
                }
                let kept = turn.tokens.len().min(max_tokens - 2);
                let base = row * n_max;
                batch.token_ids[base] = CLS;
                batch.token_mask[base] = true;
                for (wi, tok) in turn.tokens[..kept].iter().enumerate() {
                    batch.token_ids[base + 1 + wi] = vocab.id(tok);
                    batch.token_mask[base + 1 + wi] = true;
                    if let Some(tag) = turn.tags.get(wi) {
                        batch.slot_targets[base + 1 + wi] = labels.tag_index(tag)?;
                    }
                }
                batch.token_ids[base + 1 + kept] = SEP;
                batch.token_mask[base + 1 + kept] = true;
            }
        }
        Ok(batch)
    }

    /// Flat index of turn `(b, t)` into turn-level arrays.
    pub fn turn_index(&self, b: usize, t: usize) -> usize {
        b * self.max_turns + t
    }

    pub fn n_real_turns(&self) -> usize {
        self.turn_mask.iter().filter(|&&m| m).count()
    }

    /// Number of real tokens in turn row `row` (CLS and SEP included).
    pub fn turn_length(&self, row: usize) -> usize {
        let n = self.max_tokens;
        self.token_mask[row * n..(row + 1) * n]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    /// Number of dialog turns of dialog `b`.
    pub fn dialog_length(&self, b: usize) -> usize {
        (0..self.max_turns)
            .filter(|&t| self.turn_mask[self.turn_index(b, t)])
            .count()
    }
}

/// Groups dialogs into padded batches covering each dialog exactly once.
/// With a shuffle seed the dialog order is permuted deterministically first.
pub fn make_batches(
    dialogs: &[Dialog],
    vocab: &Vocab,
    labels: &LabelSets,
    batch_size: usize,
    max_tokens: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let mut order: Vec<&Dialog> = dialogs.iter().collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| Batch::from_dialogs(chunk, vocab, labels, max_tokens))
        .collect()
}
