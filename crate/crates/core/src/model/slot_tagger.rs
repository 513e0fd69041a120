//! Act-aware BiLSTM slot tagger.

use rand::Rng;

use super::act_head::LossPair;
use super::encoder::{gather_turns, real_token_mask, real_turn_rows, scatter_turns};
use super::layers::Lstm;
use crate::data::{Batch, LabelSets, IGNORE_TAG};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Appends each turn's act state to every token of that turn:
/// `[B, T, N, H_b] ⊕ [B, T, H_L] → [B, T, N, H_b + H_L]`.
pub fn concat_act_context(g: &mut Graph, tokens: Var, states: Var) -> Result<Var> {
    let ts = g.shape(tokens).to_vec();
    let ss = g.shape(states).to_vec();
    if ts.len() != 4 || ss.len() != 3 || ts[..2] != ss[..2] {
        return Err(Error::shape("concat_act_context", &ts, &ss));
    }
    let (b, t, n, hl) = (ts[0], ts[1], ts[2], ss[2]);
    let flat = g.reshape(states, &[b * t, hl])?;
    let idx: Vec<Option<usize>> = (0..b * t * n).map(|i| Some(i / n)).collect();
    let spread = g.gather_rows(flat, &idx)?;
    let spread = g.reshape(spread, &[b, t, n, hl])?;
    g.concat_last(&[tokens, spread])
}

#[derive(Clone, Debug)]
pub struct SlotTagger {
    pub forward: Lstm,
    pub backward: Lstm,
    /// `[2·H_s, |tags|]`, no bias.
    pub classifier: ParamId,
    pub n_tags: usize,
}

impl SlotTagger {
    pub fn new<R: Rng>(store: &mut ParamStore, d_in: usize, hidden: usize, n_tags: usize, rng: &mut R) -> Self {
        let forward = Lstm::new(store, "slot.forward", d_in, hidden, rng);
        let backward = Lstm::new(store, "slot.backward", d_in, hidden, rng);
        let classifier = store.register(
            "slot.classifier",
            &[2 * hidden, n_tags],
            Init::Xavier {
                fan_in: 2 * hidden,
                fan_out: n_tags,
            },
            rng,
        );
        SlotTagger {
            forward,
            backward,
            classifier,
            n_tags,
        }
    }

    /// Tag logits `[B, T, N, |tags|]` from the act-augmented token vectors.
    /// Each real turn runs through the BiLSTM on its own; padded turns and
    /// PAD tokens get zero logits.
    pub fn tag_logits(&self, g: &mut Graph, store: &ParamStore, inputs: Var, batch: &Batch) -> Result<Var> {
        let rows = real_turn_rows(batch);
        let x = gather_turns(g, inputs, &rows)?;
        let mask = real_token_mask(batch, &rows);
        let fwd = self.forward.forward(g, store, x, &mask, false)?;
        let bwd = self.backward.forward(g, store, x, &mask, true)?;
        let both = g.concat_last(&[fwd, bwd])?;
        let w = g.param(store, self.classifier);
        let logits = g.matmul(both, w)?;
        scatter_turns(g, logits, batch)
    }
}

/// Token cross-entropy over positions with a slot target. The mean divides
/// by the number of such positions.
pub fn ce_loss(g: &mut Graph, logits: Var, batch: &Batch) -> Result<LossPair> {
    let s = *g.shape(logits).last().expect("logits have a tag axis");
    let targets: Vec<Option<usize>> = batch
        .slot_targets
        .iter()
        .zip(&batch.token_mask)
        .map(|(&y, &m)| (m && y != IGNORE_TAG).then_some(y))
        .collect();
    if let Some(bad) = targets.iter().flatten().find(|&&y| y >= s) {
        return Err(Error::Index { index: *bad, size: s });
    }
    let flat = g.reshape(logits, &[targets.len(), s])?;
    let sum = g.cross_entropy(flat, &targets)?;
    let count = targets.iter().filter(|t| t.is_some()).count();
    let mean = if count == 0 {
        g.scale(sum, 0.0)
    } else {
        g.scale(sum, 1.0 / count as f64)
    };
    Ok(LossPair { sum, mean })
}

/// Best tag per word of every real turn, CLS and SEP dropped. Words cut by
/// truncation are tagged `O`. Returns one entry per `[B·T]` row, empty for
/// padded turns.
pub fn decode_tags(logits: &Tensor, batch: &Batch, labels: &LabelSets) -> Result<Vec<Vec<String>>> {
    let s = labels.n_tags();
    let n = batch.max_tokens;
    if logits.numel() != batch.turn_mask.len() * n * s {
        return Err(Error::shape(
            "decode_tags",
            logits.shape(),
            &[batch.batch_size, batch.max_turns, n, s],
        ));
    }
    let data = logits.data();
    let mut out = Vec::with_capacity(batch.turn_mask.len());
    for row in 0..batch.turn_mask.len() {
        if !batch.turn_mask[row] {
            out.push(Vec::new());
            continue;
        }
        let words = batch.word_counts[row];
        let kept = batch.turn_length(row).saturating_sub(2);
        let mut tags = Vec::with_capacity(words);
        for w in 0..kept {
            let base = (row * n + 1 + w) * s;
            let scores = &data[base..base + s];
            let mut best = 0;
            for (i, &v) in scores.iter().enumerate() {
                if v > scores[best] {
                    best = i;
                }
            }
            tags.push(labels.slot_tags[best].clone());
        }
        tags.resize(words, "O".to_string());
        out.push(tags);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dialog, Speaker, Turn, Vocab};

    #[test]
    fn concat_broadcasts_turn_state() {
        let mut g = Graph::new();
        let tok = g.constant(Tensor::zeros(&[1, 2, 3, 2]));
        let st = g.constant(Tensor::new(vec![1, 2, 1], vec![7.0, 9.0]).unwrap());
        let e = concat_act_context(&mut g, tok, st).unwrap();
        assert_eq!(g.shape(e), &[1, 2, 3, 3]);
        let v = g.value(e);
        assert_eq!(v.get(&[0, 0, 2, 2]).unwrap(), 7.0);
        assert_eq!(v.get(&[0, 1, 0, 2]).unwrap(), 9.0);
        assert_eq!(v.get(&[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn decode_restores_word_count() {
        let turn = Turn {
            speaker: Speaker::User,
            tokens: vec!["a".into(), "b".into(), "c".into()],
            acts: vec!["Inform".into()],
            tags: vec!["O".into(), "B-x".into(), "I-x".into()],
        };
        let d = Dialog {
            id: "d".into(),
            turns: vec![turn],
        };
        let labels = LabelSets::from_dialogs(std::slice::from_ref(&d)).unwrap();
        let vocab = Vocab::build(std::slice::from_ref(&d), 1);
        // max_tokens 4 keeps two of the three words
        let batch = Batch::from_dialogs(&[&d], &vocab, &labels, 4).unwrap();
        let s = labels.n_tags();
        let mut logits = vec![0.0; 4 * s];
        logits[s + labels.tag_index("B-x").unwrap()] = 1.0;
        logits[2 * s + labels.tag_index("I-x").unwrap()] = 1.0;
        let logits = Tensor::new(vec![1, 1, 4, s], logits).unwrap();
        let tags = decode_tags(&logits, &batch, &labels).unwrap();
        assert_eq!(tags, vec![vec!["B-x".to_string(), "I-x".into(), "O".into()]]);
    }
}
