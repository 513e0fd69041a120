//! Parameterized building blocks shared by the encoder, the fusion stack
//! and the two heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, Mask, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-12;

fn xavier(rows: usize, cols: usize) -> Init {
    Init::Xavier {
        fan_in: rows,
        fan_out: cols,
    }
}

/// Sinusoidal position table `[len, dim]`:
/// `PE[p, 2i] = sin(p / 10000^(2i/dim))`, `PE[p, 2i+1] = cos(…)`.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if len == 0 || dim == 0 || dim % 2 != 0 {
        return Err(Error::contract(format!(
            "positional encoding needs a positive length and an even positive width, got [{len}, {dim}]"
        )));
    }
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf((2 * i) as f64 / dim as f64);
            data[p * dim + 2 * i] = angle.sin();
            data[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, dim], data)
}

/// `x · W (+ b)` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), &[d_in, d_out], xavier(d_in, d_out), rng);
        let bias = bias.then(|| store.register(format!("{name}.bias"), &[d_out], Init::Constant(0.0), rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        LayerNorm {
            gain: store.register(format!("{name}.gain"), &[dim], Init::Constant(1.0), rng),
            bias: store.register(format!("{name}.bias"), &[dim], Init::Constant(0.0), rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Post-norm transformer layer: multi-head attention with residual and
/// layer norm, then a ReLU feed-forward with residual and layer norm.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub n_heads: usize,
    pub head_dim: usize,
    pub score_scale: f64,
}

impl AttentionBlock {
    /// `width` is the model width, `attn_width` the concatenated head width.
    /// Scores are multiplied by `score_scale` before the softmax.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        attn_width: usize,
        n_heads: usize,
        ff_dim: usize,
        score_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || attn_width % n_heads != 0 {
            return Err(Error::contract(format!(
                "attention width {attn_width} is not divisible by {n_heads} heads"
            )));
        }
        Ok(AttentionBlock {
            query: Linear::new(store, &format!("{name}.query"), width, attn_width, false, rng),
            key: Linear::new(store, &format!("{name}.key"), width, attn_width, false, rng),
            value: Linear::new(store, &format!("{name}.value"), width, attn_width, false, rng),
            output: Linear::new(store, &format!("{name}.output"), attn_width, width, false, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width, rng),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, ff_dim, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_dim, width, true, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width, rng),
            n_heads,
            head_dim: attn_width / n_heads,
            score_scale,
        })
    }

    /// `[B, h, L, d]` view of a projection of `x: [B, L, D]`.
    fn heads(&self, g: &mut Graph, x: Var, b: usize, l: usize) -> Result<Var> {
        let r = g.reshape(x, &[b, l, self.n_heads, self.head_dim])?;
        g.permute(r, &[0, 2, 1, 3])
    }

    /// Runs the layer on `x: [B, L, D]`. `mask` broadcasts to `[B, h, L, L]`
    /// with queries on axis 2 and keys on axis 3. Returns the layer output
    /// and the attention weights `[B, h, L, L]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &Mask) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("attention input", &shape, &[0, 0, 0]));
        }
        let (b, l) = (shape[0], shape[1]);
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let q = self.heads(g, q, b, l)?;
        let k = self.heads(g, k, b, l)?;
        let v = self.heads(g, v, b, l)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, self.score_scale);
        let attn = g.masked_softmax(scores, mask, 3)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, l, self.n_heads * self.head_dim])?;
        let ctx = self.output.forward(g, store, ctx)?;
        let res = g.add(x, ctx)?;
        let x1 = self.norm1.forward(g, store, res)?;
        let h = self.ff1.forward(g, store, x1)?;
        let h = g.relu(h);
        let h = self.ff2.forward(g, store, h)?;
        let res = g.add(x1, h)?;
        let out = self.norm2.forward(g, store, res)?;
        Ok((out, attn))
    }
}

/// Unidirectional LSTM with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    /// The forget-gate bias starts at 1.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.register(format!("{name}.w_ih"), &[d_in, 4 * hidden], xavier(d_in, 4 * hidden), rng);
        let w_hh = store.register(format!("{name}.w_hh"), &[hidden, 4 * hidden], xavier(hidden, 4 * hidden), rng);
        let bias = store.register(format!("{name}.bias"), &[4 * hidden], Init::Constant(0.0), rng);
        store.get_mut(bias).value.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        Lstm {
            w_ih,
            w_hh,
            bias,
            hidden,
        }
    }

    /// Runs over axis 1 of `x: [B, L, In]`. `mask` is `[B·L]`; at a masked
    /// step the state carries over unchanged and the output row is zero.
    /// With `reverse` the sequence is consumed from the end.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &[bool], reverse: bool) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return Err(Error::shape("lstm input", &shape, &[mask.len()]));
        }
        let (b, l, hd) = (shape[0], shape[1], self.hidden);
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let bias = g.param(store, self.bias);
        let pre = g.matmul(x, w_ih)?;
        let pre = g.add(pre, bias)?;

        let mut h = g.constant(Tensor::zeros(&[b, hd]));
        let mut c = h;
        let mut outputs = vec![None; l];
        let steps: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for step in steps {
            let live: Vec<bool> = (0..b).map(|bi| mask[bi * l + step]).collect();
            let xt = g.select(pre, 1, step)?;
            let rec = g.matmul(h, w_hh)?;
            let gates = g.add(xt, rec)?;
            let i = g.narrow_last(gates, 0, hd)?;
            let i = g.sigmoid(i);
            let f = g.narrow_last(gates, hd, hd)?;
            let f = g.sigmoid(f);
            let cell = g.narrow_last(gates, 2 * hd, hd)?;
            let cell = g.tanh(cell);
            let o = g.narrow_last(gates, 3 * hd, hd)?;
            let o = g.sigmoid(o);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cell)?;
            let c_new = g.add(keep, write)?;
            let squashed = g.tanh(c_new);
            let h_new = g.mul(o, squashed)?;
            if live.iter().all(|&m| m) {
                c = c_new;
                h = h_new;
                outputs[step] = Some(h_new);
            } else {
                c = g.where_rows(&live, c_new, c)?;
                h = g.where_rows(&live, h_new, h)?;
                outputs[step] = Some(g.mask_rows(h_new, &live)?);
            }
        }
        let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        g.stack(&outputs, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(3, 4).unwrap();
        assert_eq!(pe.shape(), &[3, 4]);
        assert_eq!(pe.get(&[0, 0]).unwrap(), 0.0);
        assert_eq!(pe.get(&[0, 1]).unwrap(), 1.0);
        assert!((pe.get(&[1, 0]).unwrap() - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(&[2, 3]).unwrap() - (2.0 / 100.0f64).cos()).abs() < 1e-15);
        assert!(positional_encoding(3, 5).is_err());
    }

    #[test]
    fn zero_lstm_emits_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 2, &mut rng);
        for p in store.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 4, 3]));
        let y = lstm.forward(&mut g, &store, x, &[true; 4], false).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_masked_steps_carry_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng);
        let x_full = Tensor::new(vec![1, 3, 2], vec![0.5, -1.0, 0.2, 0.3, 0.9, -0.4]).unwrap();
        // the middle step is padding: the output there is zero and the third
        // output equals a two-step run over steps 0 and 2
        let mut g = Graph::new();
        let x = g.constant(x_full);
        let y = lstm.forward(&mut g, &store, x, &[true, false, true], false).unwrap();
        let y = g.value(y).clone();
        let mut g2 = Graph::new();
        let x2 = g2.constant(Tensor::new(vec![1, 2, 2], vec![0.5, -1.0, 0.9, -0.4]).unwrap());
        let y2 = lstm.forward(&mut g2, &store, x2, &[true, true], false).unwrap();
        let y2 = g2.value(y2);
        assert!(y.row(&[0, 1]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(y.row(&[0, 2]).unwrap(), y2.row(&[0, 1]).unwrap());
        assert_eq!(y.row(&[0, 0]).unwrap(), y2.row(&[0, 0]).unwrap());
    }

    #[test]
    fn attention_block_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let block = AttentionBlock::new(&mut store, "a", 4, 6, 2, 5, 0.5, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 4], 0.1));
        let mask = Mask::new(vec![2, 1, 1, 3], vec![true, true, false, true, false, false]).unwrap();
        let (y, a) = block.forward(&mut g, &store, x, &mask).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 4]);
        assert_eq!(g.shape(a), &[2, 2, 3, 3]);
        let attn = g.value(a);
        assert_eq!(attn.get(&[1, 0, 2, 1]).unwrap(), 0.0);
        assert_eq!(attn.get(&[1, 1, 0, 0]).unwrap(), 1.0);
    }
}
