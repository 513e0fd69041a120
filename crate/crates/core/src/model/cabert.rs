//! The joint act-detection and slot-filling network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::act_head::{bce_loss, decode_acts, ActHead, LossPair};
use super::config::ModelConfig;
use super::encoder::{pool_sentence, SentencePooler, UtteranceEncoder};
use super::fusion::ContextFusion;
use super::slot_tagger::{ce_loss, concat_act_context, decode_tags, SlotTagger};
use crate::data::{Batch, LabelSets};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[B, T, N, H_b]`
    pub tokens: Var,
    /// `[B, T, H_b]`
    pub sentences: Var,
    /// `[B, T, H_b]`, equal to `sentences` without context fusion.
    pub context: Var,
    /// `[B, T, H_L]`
    pub act_states: Var,
    /// `[B, T, |acts|]`
    pub act_logits: Var,
    /// `[B, T, N, |tags|]`
    pub slot_logits: Var,
    /// Per fusion layer, `[B, h, T, T]`.
    pub fusion_attention: Vec<Var>,
    /// Token pooling weights `[R, K, N]` over real turns.
    pub pool_weights: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub act: LossPair,
    pub slot: LossPair,
    /// Act mean plus slot mean, or the act mean alone in intent-only mode.
    pub joint: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub acts: Vec<String>,
    pub act_probs: Vec<f64>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogPrediction {
    pub id: String,
    pub turns: Vec<TurnPrediction>,
}

#[derive(Clone, Debug)]
pub struct CabertSlu {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub n_acts: usize,
    pub n_tags: usize,
    encoder: UtteranceEncoder,
    pooler: Option<SentencePooler>,
    fusion: Option<ContextFusion>,
    act: ActHead,
    slot: SlotTagger,
}

impl CabertSlu {
    /// Builds a freshly initialized model. Parameter values depend only on
    /// the configuration, the label counts and `seed`.
    pub fn new(config: ModelConfig, n_acts: usize, n_tags: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_acts == 0 || n_tags == 0 {
            return Err(Error::contract("label sets must not be empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let hb = config.encoder.hidden;
        let c = config.components;
        let encoder = UtteranceEncoder::new(&mut params, &config.encoder, &mut rng)?;
        let pooler = c
            .self_attentive_pooler
            .then(|| SentencePooler::new(&mut params, hb, config.pool_heads, &mut rng));
        let fusion = if c.context_fusion {
            Some(ContextFusion::new(&mut params, &config, &mut rng)?)
        } else {
            None
        };
        let act = ActHead::new(&mut params, hb, config.act_hidden, n_acts, c.global_lstm, &mut rng);
        let slot = SlotTagger::new(&mut params, hb + config.act_hidden, config.slot_hidden, n_tags, &mut rng);
        Ok(CabertSlu {
            config,
            params,
            n_acts,
            n_tags,
            encoder,
            pooler,
            fusion,
            act,
            slot,
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.n_acts != self.n_acts {
            return Err(Error::contract(format!(
                "batch has {} acts but the model predicts {}",
                batch.n_acts, self.n_acts
            )));
        }
        if let Some(&bad) = batch.token_ids.iter().find(|&&id| id >= self.config.encoder.vocab_size) {
            return Err(Error::Index {
                index: bad,
                size: self.config.encoder.vocab_size,
            });
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Forward> {
        self.forward_with(&self.params, g, batch)
    }

    /// Forward pass reading parameters from `store`, which must share this
    /// model's layout.
    pub fn forward_with(&self, store: &ParamStore, g: &mut Graph, batch: &Batch) -> Result<Forward> {
        self.check_batch(batch)?;
        let tokens = self.encoder.encode_tokens(g, store, batch)?;
        let pooled = pool_sentence(g, store, tokens, batch, self.pooler.as_ref())?;
        let (context, fusion_attention) = match &self.fusion {
            Some(f) => {
                let fused = f.fuse(g, store, pooled.sentences, &batch.turn_mask)?;
                (fused.context, fused.attention)
            }
            None => (pooled.sentences, Vec::new()),
        };
        let act_states = self.act.lstm_forward(g, store, context, &batch.turn_mask)?;
        let act_logits = self.act.act_logits(g, store, act_states)?;
        let slot_in = concat_act_context(g, tokens, act_states)?;
        let slot_logits = self.slot.tag_logits(g, store, slot_in, batch)?;
        Ok(Forward {
            tokens,
            sentences: pooled.sentences,
            context,
            act_states,
            act_logits,
            slot_logits,
            fusion_attention,
            pool_weights: pooled.weights,
        })
    }

    pub fn losses(&self, g: &mut Graph, fwd: &Forward, batch: &Batch, intent_only: bool) -> Result<Losses> {
        let act = bce_loss(g, fwd.act_logits, batch)?;
        let slot = ce_loss(g, fwd.slot_logits, batch)?;
        let joint = if intent_only {
            act.mean
        } else {
            g.add(act.mean, slot.mean)?
        };
        Ok(Losses { act, slot, joint })
    }

    /// Joint loss value under the parameters in `store`.
    pub fn loss_with(&self, store: &ParamStore, batch: &Batch, intent_only: bool) -> Result<f64> {
        let mut g = Graph::new();
        let fwd = self.forward_with(store, &mut g, batch)?;
        let losses = self.losses(&mut g, &fwd, batch, intent_only)?;
        g.value(losses.joint).item()
    }

    /// Forward, backward and gradient accumulation into `self.params`.
    /// Returns the joint loss.
    pub fn accumulate_gradients(&mut self, batch: &Batch, intent_only: bool) -> Result<f64> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch)?;
        let losses = self.losses(&mut g, &fwd, batch, intent_only)?;
        let loss = g.value(losses.joint).item()?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} on batch starting with dialog {:?}",
                batch.dialog_ids.first().map(String::as_str).unwrap_or("")
            )));
        }
        g.backward(losses.joint)?;
        self.params.accumulate_grads(&g);
        Ok(loss)
    }

    /// Decoded acts and tags for every dialog of the batch.
    pub fn predict(&self, batch: &Batch, labels: &LabelSets) -> Result<Vec<DialogPrediction>> {
        if labels.n_acts() != self.n_acts || labels.n_tags() != self.n_tags {
            return Err(Error::contract("label sets do not match the model"));
        }
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch)?;
        let probs = g.sigmoid(fwd.act_logits);
        let probs = g.value(probs).data();
        let tags = decode_tags(g.value(fwd.slot_logits), batch, labels)?;
        let a = self.n_acts;
        let mut out = Vec::with_capacity(batch.batch_size);
        for b in 0..batch.batch_size {
            let mut turns = Vec::new();
            for t in 0..batch.dialog_length(b) {
                let row = batch.turn_index(b, t);
                let p = &probs[row * a..(row + 1) * a];
                turns.push(TurnPrediction {
                    acts: decode_acts(p, self.config.act_threshold)
                        .into_iter()
                        .map(|i| labels.acts[i].clone())
                        .collect(),
                    act_probs: p.to_vec(),
                    tags: tags[row].clone(),
                });
            }
            out.push(DialogPrediction {
                id: batch.dialog_ids[b].clone(),
                turns,
            });
        }
        Ok(out)
    }

    /// Last fusion layer's attention averaged over heads, one `[T_b, T_b]`
    /// matrix per dialog of the batch.
    pub fn turn_attention(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        if self.fusion.as_ref().map_or(true, |f| f.layers.is_empty()) {
            return Err(Error::contract("model has no context fusion layers"));
        }
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch)?;
        let last = g.value(*fwd.fusion_attention.last().expect("at least one layer"));
        let (heads, t) = (last.shape()[1], batch.max_turns);
        let mut out = Vec::with_capacity(batch.batch_size);
        for b in 0..batch.batch_size {
            let len = batch.dialog_length(b);
            let mut m = vec![0.0; len * len];
            for h in 0..heads {
                for q in 0..len {
                    let row = last.row(&[b, h, q])?;
                    for k in 0..len {
                        m[q * len + k] += row[k] / heads as f64;
                    }
                }
            }
            debug_assert!(len <= t);
            out.push(Tensor::new(vec![len, len], m)?);
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }
}
