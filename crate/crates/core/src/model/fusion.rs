//! Causal multi-head attention across the turns of a dialog.

use rand::Rng;

use super::config::{AttentionScale, ModelConfig};
use super::layers::{positional_encoding, AttentionBlock};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mask, ParamStore, Var};

/// Causal turn mask `[B, 1, T, T]`: query `t` may attend to key `t'` iff
/// `t' <= t` and turn `t'` is real.
pub fn causal_mask(turn_mask: &[bool], batch_size: usize, max_turns: usize) -> Result<Mask> {
    let t = max_turns;
    if turn_mask.len() != batch_size * t {
        return Err(Error::shape("causal mask", &[batch_size, t], &[turn_mask.len()]));
    }
    let mut data = vec![false; batch_size * t * t];
    for b in 0..batch_size {
        for q in 0..t {
            for k in 0..t {
                // padded query rows still need one live key for the softmax
                let live = if turn_mask[b * t + q] {
                    k <= q && turn_mask[b * t + k]
                } else {
                    k == q
                };
                data[(b * t + q) * t + k] = live;
            }
        }
    }
    Mask::new(vec![batch_size, 1, t, t], data)
}

/// Output of the fusion stack: `context` is `[B, T, H_b]`, `attention`
/// holds the per-layer weights `[B, h, T, T]`.
#[derive(Clone, Debug)]
pub struct Fused {
    pub context: Var,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ContextFusion {
    pub layers: Vec<AttentionBlock>,
    pub hidden: usize,
}

impl ContextFusion {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let hidden = config.encoder.hidden;
        let scale = match config.attention_scale {
            AttentionScale::Paper => 1.0 / (hidden as f64).sqrt(),
            AttentionScale::PerHead => 1.0 / ((config.fusion_hidden / config.fusion_heads) as f64).sqrt(),
        };
        let layers = (0..config.fusion_layers)
            .map(|l| {
                AttentionBlock::new(
                    store,
                    &format!("fusion.layer{l}"),
                    hidden,
                    config.fusion_hidden,
                    config.fusion_heads,
                    config.fusion_ff_dim,
                    scale,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(ContextFusion { layers, hidden })
    }

    /// Adds turn positions to the sentence vectors `[B, T, H_b]` and runs
    /// the causal stack. Padded turns come out as zero rows.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, sentences: Var, turn_mask: &[bool]) -> Result<Fused> {
        let shape = g.shape(sentences).to_vec();
        if shape.len() != 3 || shape[2] != self.hidden {
            return Err(Error::shape("fuse", &shape, &[0, 0, self.hidden]));
        }
        let (b, t) = (shape[0], shape[1]);
        let pe = g.constant(positional_encoding(t, self.hidden)?);
        let mut c = g.add(sentences, pe)?;
        let mask = causal_mask(turn_mask, b, t)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, attn) = layer.forward(g, store, c, &mask)?;
            c = out;
            attention.push(attn);
        }
        let context = g.mask_rows(c, turn_mask)?;
        Ok(Fused { context, attention })
    }
}
