//! Global LSTM over turns and the multi-label act classifier.

use rand::Rng;

use super::layers::{Linear, Lstm};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamId, ParamStore, Var};

/// Summed loss and its mean over the normalizing count.
#[derive(Clone, Copy, Debug)]
pub struct LossPair {
    pub sum: Var,
    pub mean: Var,
}

#[derive(Clone, Debug)]
enum Recurrence {
    Lstm(Lstm),
    /// Width adapter used when the global LSTM is disabled.
    Adapter(Linear),
}

#[derive(Clone, Debug)]
pub struct ActHead {
    recurrence: Recurrence,
    /// `[H_L, |acts|]`, no bias.
    pub classifier: ParamId,
    pub hidden: usize,
    pub n_acts: usize,
}

impl ActHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d_in: usize,
        hidden: usize,
        n_acts: usize,
        use_lstm: bool,
        rng: &mut R,
    ) -> Self {
        let recurrence = if use_lstm {
            Recurrence::Lstm(Lstm::new(store, "act.lstm", d_in, hidden, rng))
        } else {
            Recurrence::Adapter(Linear::new(store, "act.adapter", d_in, hidden, true, rng))
        };
        let classifier = store.register(
            "act.classifier",
            &[hidden, n_acts],
            Init::Xavier {
                fan_in: hidden,
                fan_out: n_acts,
            },
            rng,
        );
        ActHead {
            recurrence,
            classifier,
            hidden,
            n_acts,
        }
    }

    /// Turn states `H_act: [B, T, H_L]`; padded turns are zero rows.
    pub fn lstm_forward(&self, g: &mut Graph, store: &ParamStore, context: Var, turn_mask: &[bool]) -> Result<Var> {
        match &self.recurrence {
            Recurrence::Lstm(lstm) => lstm.forward(g, store, context, turn_mask, false),
            Recurrence::Adapter(lin) => {
                let y = lin.forward(g, store, context)?;
                g.mask_rows(y, turn_mask)
            }
        }
    }

    /// Act logits `[B, T, |acts|]`.
    pub fn act_logits(&self, g: &mut Graph, store: &ParamStore, states: Var) -> Result<Var> {
        let w = g.param(store, self.classifier);
        g.matmul(states, w)
    }
}

/// Binary cross-entropy over every act of every real turn. The mean divides
/// by the number of real turns.
pub fn bce_loss(g: &mut Graph, logits: Var, batch: &Batch) -> Result<LossPair> {
    if batch.act_targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract("act targets must be 0 or 1"));
    }
    let a = batch.n_acts;
    let weights: Vec<f64> = (0..batch.act_targets.len())
        .map(|i| if batch.turn_mask[i / a] { 1.0 } else { 0.0 })
        .collect();
    let sum = g.bce_with_logits(logits, &batch.act_targets, &weights)?;
    let turns = batch.n_real_turns();
    if turns == 0 {
        return Err(Error::contract("batch has no real turns"));
    }
    let mean = g.scale(sum, 1.0 / turns as f64);
    Ok(LossPair { sum, mean })
}

/// Indices of acts with probability at or above `threshold`; if none
/// qualifies, the single most probable act (lowest index on ties).
pub fn decode_acts(probs: &[f64], threshold: f64) -> Vec<usize> {
    let chosen: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= threshold).collect();
    if !chosen.is_empty() || probs.is_empty() {
        return chosen;
    }
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    vec![best]
}
