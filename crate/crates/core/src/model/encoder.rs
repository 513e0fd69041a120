//! Token-level utterance encoder and the self-attentive sentence pooler.

use rand::Rng;

use super::config::EncoderConfig;
use super::layers::{positional_encoding, AttentionBlock, Linear};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, Mask, ParamId, ParamStore, Tensor, Var};

/// Row index of every real turn into the flattened `[B·T]` turn axis.
pub fn real_turn_rows(batch: &Batch) -> Vec<usize> {
    (0..batch.turn_mask.len()).filter(|&r| batch.turn_mask[r]).collect()
}

/// Inverse of [`real_turn_rows`]: for every `[B·T]` row, its position among
/// the real turns, or `None` for padding.
pub fn scatter_index(batch: &Batch) -> Vec<Option<usize>> {
    let mut next = 0;
    batch
        .turn_mask
        .iter()
        .map(|&m| {
            m.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Token mask restricted to the real turns, `[R·N]`.
pub fn real_token_mask(batch: &Batch, rows: &[usize]) -> Vec<bool> {
    let n = batch.max_tokens;
    rows.iter()
        .flat_map(|&r| batch.token_mask[r * n..(r + 1) * n].iter().copied())
        .collect()
}

/// Picks the real turns out of a `[B, T, …]` tensor, giving `[R, …]`.
pub fn gather_turns(g: &mut Graph, x: Var, rows: &[usize]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() < 2 {
        return Err(Error::shape("gather_turns", &shape, &[rows.len()]));
    }
    let mut flat = vec![shape[0] * shape[1]];
    flat.extend_from_slice(&shape[2..]);
    let x = g.reshape(x, &flat)?;
    let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
    g.gather_rows(x, &idx)
}

/// Places `[R, …]` real-turn rows back into a zero-padded `[B, T, …]` tensor.
pub fn scatter_turns(g: &mut Graph, x: Var, batch: &Batch) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let idx = scatter_index(batch);
    let y = g.gather_rows(x, &idx)?;
    let mut full = vec![batch.batch_size, batch.max_turns];
    full.extend_from_slice(&shape[1..]);
    g.reshape(y, &full)
}

/// Transformer encoder over the tokens of each utterance, independently.
#[derive(Clone, Debug)]
pub struct UtteranceEncoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    pub layers: Vec<AttentionBlock>,
}

impl UtteranceEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let h = config.hidden;
        let embedding = store.register(
            "encoder.embedding",
            &[config.vocab_size, h],
            Init::Xavier {
                fan_in: config.vocab_size,
                fan_out: h,
            },
            rng,
        );
        let scale = 1.0 / ((h / config.n_heads) as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|l| {
                AttentionBlock::new(
                    store,
                    &format!("encoder.layer{l}"),
                    h,
                    h,
                    config.n_heads,
                    config.ff_dim,
                    scale,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(UtteranceEncoder {
            config: config.clone(),
            embedding,
            layers,
        })
    }

    /// Contextual token vectors `[B, T, N, H_b]`. Rows of PAD tokens and of
    /// padded turns are zero; real tokens never attend to PAD positions.
    pub fn encode_tokens(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let rows = real_turn_rows(batch);
        if rows.is_empty() {
            return Err(Error::contract("batch has no real turns"));
        }
        let (n, h) = (batch.max_tokens, self.config.hidden);
        let ids: Vec<Option<usize>> = rows
            .iter()
            .flat_map(|&r| batch.token_ids[r * n..(r + 1) * n].iter().map(|&id| Some(id)))
            .collect();
        let table = g.param(store, self.embedding);
        let x = g.gather_rows(table, &ids)?;
        let x = g.reshape(x, &[rows.len(), n, h])?;
        let pe = g.constant(positional_encoding(n, h)?);
        let mut x = g.add(x, pe)?;

        let tok_mask = real_token_mask(batch, &rows);
        let key_mask = Mask::new(vec![rows.len(), 1, 1, n], tok_mask.clone())?;
        for layer in &self.layers {
            x = layer.forward(g, store, x, &key_mask)?.0;
        }
        let x = g.mask_rows(x, &tok_mask)?;
        scatter_turns(g, x, batch)
    }
}

/// Sentence pooling result: `s` is `[B, T, H_b]`, `weights` the token
/// attention `[R, K, N]` over real turns when the self-attentive pooler ran.
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub sentences: Var,
    pub weights: Option<Var>,
}

/// Self-attentive pooling with `K` learnable context vectors.
#[derive(Clone, Debug)]
pub struct SentencePooler {
    pub projection: Linear,
    /// Context vectors `[K, H_b]`.
    pub context: ParamId,
    /// Maps the `K·H_b` concatenation back to `H_b`.
    pub merge: ParamId,
    pub heads: usize,
    pub hidden: usize,
}

impl SentencePooler {
    pub fn new<R: Rng>(store: &mut ParamStore, hidden: usize, heads: usize, rng: &mut R) -> Self {
        let projection = Linear::new(store, "pooler.projection", hidden, hidden, true, rng);
        let context = store.register(
            "pooler.context",
            &[heads, hidden],
            Init::Xavier {
                fan_in: hidden,
                fan_out: heads,
            },
            rng,
        );
        let merge = store.register(
            "pooler.merge",
            &[heads * hidden, hidden],
            Init::Xavier {
                fan_in: heads * hidden,
                fan_out: hidden,
            },
            rng,
        );
        SentencePooler {
            projection,
            context,
            merge,
            heads,
            hidden,
        }
    }
}

/// Collapses each turn's token vectors `[B, T, N, H_b]` into one sentence
/// vector. With a pooler the weights are a masked softmax over real tokens
/// per context vector; without one, real tokens are averaged.
/// Padded turns give zero rows.
pub fn pool_sentence(
    g: &mut Graph,
    store: &ParamStore,
    tokens: Var,
    batch: &Batch,
    pooler: Option<&SentencePooler>,
) -> Result<Pooled> {
    let rows = real_turn_rows(batch);
    let n = batch.max_tokens;
    for &r in &rows {
        if batch.turn_length(r) == 0 {
            return Err(Error::contract(format!("real turn {r} has no tokens")));
        }
    }
    let x = gather_turns(g, tokens, &rows)?;
    let h = *g.shape(x).last().expect("token tensor has a width");
    let r_count = rows.len();
    let tok_mask = real_token_mask(batch, &rows);

    let (pooled, weights) = match pooler {
        Some(p) => {
            let proj = p.projection.forward(g, store, x)?;
            let u = g.param(store, p.context);
            let ut = g.transpose(u)?;
            let scores = g.matmul(proj, ut)?;
            let scores = g.transpose(scores)?;
            let mask = Mask::new(vec![r_count, 1, n], tok_mask)?;
            let alpha = g.masked_softmax(scores, &mask, 2)?;
            let heads = g.matmul(alpha, x)?;
            let flat = g.reshape(heads, &[r_count, p.heads * h])?;
            let w = g.param(store, p.merge);
            (g.matmul(flat, w)?, Some(alpha))
        }
        None => {
            let mut avg = vec![0.0; r_count * n];
            for ri in 0..r_count {
                let count = tok_mask[ri * n..(ri + 1) * n].iter().filter(|&&m| m).count() as f64;
                for j in 0..n {
                    if tok_mask[ri * n + j] {
                        avg[ri * n + j] = 1.0 / count;
                    }
                }
            }
            let w = g.constant(Tensor::new(vec![r_count, 1, n], avg)?);
            let mean = g.matmul(w, x)?;
            (g.reshape(mean, &[r_count, h])?, None)
        }
    };
    let sentences = scatter_turns(g, pooled, batch)?;
    Ok(Pooled { sentences, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dependency, LabelSets, Vocab, PAD};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Batch, usize) {
        let mut ds = generate_synthetic(5, 3, Dependency::Deterministic);
        ds[1].turns.truncate(3);
        let vocab = Vocab::build(&ds, 1);
        let labels = LabelSets::from_dialogs(&ds).unwrap();
        let refs: Vec<_> = ds.iter().collect();
        (Batch::from_dialogs(&refs, &vocab, &labels, 60).unwrap(), vocab.len())
    }

    fn encoder(vocab: usize) -> (ParamStore, UtteranceEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            n_layers: 2,
            hidden: 8,
            n_heads: 2,
            ff_dim: 12,
            vocab_size: vocab,
            max_tokens: 60,
        };
        let enc = UtteranceEncoder::new(&mut store, &cfg, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn encoder_shapes_and_padding() {
        let (batch, v) = fixture();
        let (store, enc) = encoder(v);
        let mut g = Graph::new();
        let h = enc.encode_tokens(&mut g, &store, &batch).unwrap();
        let (b, t, n) = (batch.batch_size, batch.max_turns, batch.max_tokens);
        assert_eq!(g.shape(h), &[b, t, n, 8]);
        let val = g.value(h);
        for bi in 0..b {
            for ti in 0..t {
                for j in 0..n {
                    let row = val.row(&[bi, ti, j]).unwrap();
                    let real = batch.token_mask[(bi * t + ti) * n + j];
                    assert_eq!(row.iter().any(|&x| x != 0.0), real);
                }
            }
        }
    }

    #[test]
    fn pad_token_ids_do_not_leak() {
        let (mut batch, v) = fixture();
        let (store, enc) = encoder(v);
        let mut g = Graph::new();
        let h1 = enc.encode_tokens(&mut g, &store, &batch).unwrap();
        let before = g.value(h1).clone();
        for (id, &m) in batch.token_ids.iter_mut().zip(&batch.token_mask) {
            if !m {
                *id = 5;
            }
        }
        assert_ne!(batch.token_ids.iter().filter(|&&i| i == PAD).count(), batch.token_ids.len());
        let mut g = Graph::new();
        let h2 = enc.encode_tokens(&mut g, &store, &batch).unwrap();
        assert_eq!(&before, g.value(h2));
    }

    #[test]
    fn pooler_weights_are_distributions_over_real_tokens() {
        let (batch, v) = fixture();
        let (mut store, enc) = encoder(v);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pooler = SentencePooler::new(&mut store, 8, 3, &mut rng);
        let mut g = Graph::new();
        let h = enc.encode_tokens(&mut g, &store, &batch).unwrap();
        let pooled = pool_sentence(&mut g, &store, h, &batch, Some(&pooler)).unwrap();
        assert_eq!(g.shape(pooled.sentences), &[batch.batch_size, batch.max_turns, 8]);
        let alpha = g.value(pooled.weights.unwrap());
        let rows = real_turn_rows(&batch);
        let n = batch.max_tokens;
        for (ri, &r) in rows.iter().enumerate() {
            for k in 0..3 {
                let w = alpha.row(&[ri, k]).unwrap();
                let total: f64 = w.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                for j in 0..n {
                    if !batch.token_mask[r * n + j] {
                        assert_eq!(w[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_pooling_fallback() {
        let (batch, v) = fixture();
        let (store, enc) = encoder(v);
        let mut g = Graph::new();
        let h = enc.encode_tokens(&mut g, &store, &batch).unwrap();
        let pooled = pool_sentence(&mut g, &store, h, &batch, None).unwrap();
        assert!(pooled.weights.is_none());
        let tok = g.value(h);
        let s = g.value(pooled.sentences);
        let len = batch.turn_length(0) as f64;
        let mut expect = vec![0.0; 8];
        for j in 0..batch.max_tokens {
            for (e, x) in expect.iter_mut().zip(tok.row(&[0, 0, j]).unwrap()) {
                *e += x / len;
            }
        }
        for (a, b) in s.row(&[0, 0]).unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // padded turn of the truncated dialog
        assert!(s.row(&[1, batch.max_turns - 1]).unwrap().iter().all(|&x| x == 0.0));
    }
}
