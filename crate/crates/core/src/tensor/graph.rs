use std::collections::HashMap;

use super::gemm::{gemm, Layout};
use super::{Mask, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Transpose {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        inverse: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Narrow {
        x: Var,
        start: usize,
        width: usize,
    },
    GatherRows {
        src: Var,
        index: Vec<Option<usize>>,
        row: usize,
    },
    Stack {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
    },
    Select {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        index: usize,
    },
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    WhereRows {
        cond: Vec<bool>,
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    BceWithLogits {
        x: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    CrossEntropy {
        x: Var,
        classes: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Computation tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Number of times `small` repeats inside `big` when `small`'s shape is a
/// suffix of `big`'s shape.
fn suffix_repeat(op: &'static str, big: &[usize], small: &[usize]) -> Result<usize> {
    if small.len() > big.len() || big[big.len() - small.len()..] != *small {
        return Err(Error::shape(op, big, small));
    }
    Ok(big[..big.len() - small.len()].iter().product())
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let ndim = shape.len();
    let mut in_strides = vec![1usize; ndim];
    for i in (0..ndim.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut index = vec![0usize; ndim];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for axis in (0..ndim).rev() {
            index[axis] += 1;
            offset += strides[axis];
            if index[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * out_shape[axis];
            index[axis] = 0;
        }
    }
    (out, out_shape)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_raw(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        self.push(Tensor { shape, data }, op, parents)
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is tracked, without a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            grad: None,
            requires_grad: true,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Graph::backward`]; `None` before any pass
    /// or for nodes that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes.iter().filter_map(|n| match (&n.op, &n.grad) {
            (Op::Param(id), Some(g)) => Some((*id, g.as_slice())),
            _ => None,
        })
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product over the last two axes. Leading axes must match, or one
    /// operand may be a plain matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let a_batched = !lead_a.is_empty();
        let b_batched = !lead_b.is_empty();
        if a_batched && b_batched && lead_a != lead_b {
            return Err(Error::shape("matmul", &sa, &sb));
        }

        // A shared right operand lets the whole batch run as one tall product.
        if a_batched && !b_batched {
            let rows: usize = lead_a.iter().product::<usize>() * m;
            let mut out = vec![0.0; rows * n];
            gemm(
                rows,
                k,
                n,
                self.value(a).data(),
                Layout::row_major(k),
                self.value(b).data(),
                Layout::row_major(n),
                0.0,
                &mut out,
            );
            let mut shape = lead_a.to_vec();
            shape.extend([m, n]);
            let op = Op::MatMul {
                a,
                b,
                batch: 1,
                m: rows,
                k,
                n,
                a_batched: false,
                b_batched: false,
            };
            return Ok(self.push_raw(shape, out, op, &[a, b]));
        }

        let lead = if a_batched { lead_a } else { lead_b };
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            for i in 0..batch {
                let ao = if a_batched { i * m * k } else { 0 };
                let bo = if b_batched { i * k * n } else { 0 };
                gemm(
                    m,
                    k,
                    n,
                    &da[ao..ao + m * k],
                    Layout::row_major(k),
                    &db[bo..bo + k * n],
                    Layout::row_major(n),
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            a_batched,
            b_batched,
        };
        Ok(self.push_raw(shape, out, op, &[a, b]))
    }

    /// Swaps the last two axes (materialized).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("transpose", &shape, &[2]));
        }
        let rows = shape[shape.len() - 2];
        let cols = shape[shape.len() - 1];
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..batch {
            let o = bi * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[o + c * rows + r] = src[o + r * cols + c];
                }
            }
        }
        let mut new_shape = shape.clone();
        let l = new_shape.len();
        new_shape.swap(l - 1, l - 2);
        Ok(self.push_raw(new_shape, out, Op::Transpose { x, batch, rows, cols }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", &shape, axes));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.push_raw(out_shape, data, Op::Permute { x, inverse }, &[x]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        suffix_repeat(name, &sa, &sb)?;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let w = db.len();
        let data = da
            .chunks(w)
            .flat_map(|chunk| chunk.iter().zip(db).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok((sa, data))
    }

    /// `a + b`, where `b`'s shape may be a suffix of `a`'s (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_raw(shape, data, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_raw(shape, data, Op::Sub { a, b }, &[a, b]))
    }

    /// Elementwise product with the same suffix broadcast as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_raw(shape, data, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| v * factor).collect();
        self.push_raw(shape, data, Op::Scale { x, factor }, &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&v| f(v)).collect();
        self.push_raw(shape, data, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax along `axis` restricted to positions where `mask` is true.
    /// Masked positions receive exactly zero and are excluded from the
    /// normalizer, reproducing an additive `-1e9` mask followed by a
    /// multiplication with the mask.
    pub fn masked_softmax(&mut self, x: Var, mask: &Mask, axis: usize) -> Result<Var> {
        let keep = mask.broadcast_to(self.shape(x))?;
        self.softmax_impl(x, axis, Some(&keep))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, keep: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax axis", &shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let live = |l: usize| keep.map_or(true, |k| k[idx(l)]);
                let mut max = f64::NEG_INFINITY;
                let mut any = false;
                for l in 0..len {
                    if live(l) {
                        any = true;
                        max = max.max(src[idx(l)]);
                    }
                }
                if !any {
                    return Err(Error::contract("masked_softmax over a fully masked slice"));
                }
                let mut sum = 0.0;
                for l in 0..len {
                    if live(l) {
                        let e = (src[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        sum += e;
                    }
                }
                for l in 0..len {
                    out[idx(l)] /= sum;
                }
            }
        }
        Ok(self.push_raw(shape, out, Op::Softmax { x, outer, len, inner }, &[x]))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm", &shape, &[]))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let mut normalized = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        Ok(self.push_raw(shape, out, op, &[x, gain, bias]))
    }

    /// Concatenates along the last axis; all other axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::contract("concat of nothing"))?)
            .to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat", &first, s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let op = Op::Concat {
            parts: parts.iter().copied().zip(widths).collect(),
        };
        Ok(self.push_raw(shape, out, op, parts))
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| Error::shape("narrow", &shape, &[]))?;
        if len == 0 || start + len > width {
            return Err(Error::shape("narrow", &shape, &[start, len]));
        }
        let src = self.value(x).data();
        let out: Vec<f64> = src
            .chunks(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        Ok(self.push_raw(new_shape, out, Op::Narrow { x, start, width }, &[x]))
    }

    /// Picks rows of `src` along its first axis; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, index: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(src).to_vec();
        if shape.is_empty() || index.is_empty() {
            return Err(Error::shape("gather_rows", &shape, &[index.len()]));
        }
        let n_rows = shape[0];
        let row: usize = shape[1..].iter().product();
        let data = self.value(src).data();
        let mut out = vec![0.0; index.len() * row];
        for (o, idx) in index.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= n_rows {
                    return Err(Error::Index {
                        index: i,
                        size: n_rows,
                    });
                }
                out[o * row..(o + 1) * row].copy_from_slice(&data[i * row..(i + 1) * row]);
            }
        }
        let mut new_shape = vec![index.len()];
        new_shape.extend_from_slice(&shape[1..]);
        let op = Op::GatherRows {
            src,
            index: index.to_vec(),
            row,
        };
        Ok(self.push_raw(new_shape, out, op, &[src]))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::contract("stack of nothing"))?)
            .to_vec();
        if axis > first.len() {
            return Err(Error::shape("stack axis", &first, &[axis]));
        }
        for &p in parts {
            if self.shape(p) != first.as_slice() {
                return Err(Error::shape("stack", &first, self.shape(p)));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * parts.len() * inner);
        for o in 0..outer {
            for &p in parts {
                out.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = first;
        shape.insert(axis, parts.len());
        let op = Op::Stack {
            parts: parts.to_vec(),
            outer,
            inner,
        };
        Ok(self.push_raw(shape, out, op, parts))
    }

    /// Index `index` of `axis`, removing that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("select axis", &shape, &[axis]));
        }
        if index >= shape[axis] {
            return Err(Error::Index {
                index,
                size: shape[axis],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let op = Op::Select {
            x,
            outer,
            len,
            inner,
            index,
        };
        Ok(self.push_raw(new_shape, out, op, &[x]))
    }

    /// Zeroes row `r` (of `numel / keep.len()` contiguous elements) wherever
    /// `keep[r]` is false.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if keep.is_empty() || t.numel() % keep.len() != 0 {
            return Err(Error::shape("mask_rows", t.shape(), &[keep.len()]));
        }
        let row = t.numel() / keep.len();
        let shape = t.shape().to_vec();
        let mut out = t.data().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out[r * row..(r + 1) * row].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let op = Op::MaskRows {
            x,
            keep: keep.to_vec(),
        };
        Ok(self.push_raw(shape, out, op, &[x]))
    }

    /// Row-wise select: row `r` comes from `a` if `cond[r]`, else from `b`.
    pub fn where_rows(&mut self, cond: &[bool], a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(Error::shape("where_rows", &sa, self.shape(b)));
        }
        let numel = self.value(a).numel();
        if cond.is_empty() || numel % cond.len() != 0 {
            return Err(Error::shape("where_rows", &sa, &[cond.len()]));
        }
        let row = numel / cond.len();
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = Vec::with_capacity(numel);
        for (r, &c) in cond.iter().enumerate() {
            let src = if c { da } else { db };
            out.extend_from_slice(&src[r * row..(r + 1) * row]);
        }
        let op = Op::WhereRows {
            cond: cond.to_vec(),
            a,
            b,
        };
        Ok(self.push_raw(sa, out, op, &[a, b]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_raw(Vec::new(), vec![s], Op::Sum { x }, &[x])
    }

    /// `Σ w·[-y·log σ(x) - (1-y)·log(1-σ(x))]`, evaluated in log-sum-exp form.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let logits = self.value(x).data();
        if targets.len() != logits.len() || weights.len() != logits.len() {
            return Err(Error::shape("bce_with_logits", self.shape(x), &[targets.len()]));
        }
        let mut total = 0.0;
        for ((&z, &y), &w) in logits.iter().zip(targets).zip(weights) {
            if w != 0.0 {
                total += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        let op = Op::BceWithLogits {
            x,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push_raw(Vec::new(), vec![total], op, &[x]))
    }

    /// `-Σ log softmax(x)[target]` over rows of the last axis; rows with a
    /// `None` target are skipped.
    pub fn cross_entropy(&mut self, x: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let classes = *shape.last().ok_or_else(|| Error::shape("cross_entropy", &shape, &[]))?;
        let logits = self.value(x).data();
        if logits.len() / classes != targets.len() {
            return Err(Error::shape("cross_entropy", &shape, &[targets.len()]));
        }
        let mut probs = vec![0.0; logits.len()];
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= classes {
                return Err(Error::Index {
                    index: t,
                    size: classes,
                });
            }
            let row = &logits[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let op = Op::CrossEntropy {
            x,
            classes,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push_raw(Vec::new(), vec![total], op, &[x]))
    }

    // ----------------------------------------------------------- backward

    /// Backpropagates from a scalar `loss`. Every node that requires
    /// gradients gets `d loss / d node` added to its stored gradient, so
    /// repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => add_into(acc, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();

        match &nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            } => {
                let (da_val, db_val) = (val(a), val(b));
                if let Some(ga) = slot(nodes, grads, a) {
                    for bi in 0..batch {
                        let ao = if a_batched { bi * m * k } else { 0 };
                        let bo = if b_batched { bi * k * n } else { 0 };
                        // dA = dC · Bᵀ
                        gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..(bi + 1) * m * n],
                            Layout::row_major(n),
                            &db_val[bo..bo + k * n],
                            Layout::transposed(n),
                            1.0,
                            &mut ga[ao..ao + m * k],
                        );
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for bi in 0..batch {
                        let ao = if a_batched { bi * m * k } else { 0 };
                        let bo = if b_batched { bi * k * n } else { 0 };
                        // dB = Aᵀ · dC
                        gemm(
                            k,
                            m,
                            n,
                            &da_val[ao..ao + m * k],
                            Layout::transposed(k),
                            &g[bi * m * n..(bi + 1) * m * n],
                            Layout::row_major(n),
                            1.0,
                            &mut gb[bo..bo + k * n],
                        );
                    }
                }
            }
            &Op::Transpose { x, batch, rows, cols } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for bi in 0..batch {
                        let o = bi * rows * cols;
                        for r in 0..rows {
                            for c in 0..cols {
                                gx[o + r * cols + c] += g[o + c * rows + r];
                            }
                        }
                    }
                }
            }
            &Op::Reshape { x } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    add_into(gx, g);
                }
            }
            Op::Permute { x, inverse } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let (back, _) = permute_data(g, nodes[i].value.shape(), inverse);
                    add_into(gx, &back);
                }
            }
            &Op::Add { a, b } => {
                if let Some(ga) = slot(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let w = gb.len();
                    for chunk in g.chunks(w) {
                        add_into(gb, chunk);
                    }
                }
            }
            &Op::Sub { a, b } => {
                if let Some(ga) = slot(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let w = gb.len();
                    for chunk in g.chunks(w) {
                        for (d, s) in gb.iter_mut().zip(chunk) {
                            *d -= s;
                        }
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (val(a), val(b));
                let w = vb.len();
                if let Some(ga) = slot(nodes, grads, a) {
                    for (j, (d, gv)) in ga.iter_mut().zip(g).enumerate() {
                        *d += gv * vb[j % w];
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for (j, (gv, av)) in g.iter().zip(va).enumerate() {
                        gb[j % w] += gv * av;
                    }
                }
            }
            &Op::Scale { x, factor } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for (d, gv) in gx.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                }
            }
            &Op::Sigmoid { x } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, gv), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            &Op::Tanh { x } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, gv), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            &Op::Relu { x } => {
                let vx = val(x);
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, gv), xv) in gx.iter_mut().zip(g).zip(vx) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::Softmax { x, outer, len, inner } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + ii;
                            let dot: f64 = (0..len).map(|l| g[idx(l)] * out[idx(l)]).sum();
                            for l in 0..len {
                                gx[idx(l)] += out[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = val(*gain);
                let d = gv.len();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let xh = &normalized[row.clone()];
                        let gr = &g[row.clone()];
                        let dxh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for (j, dst) in gx[row].iter_mut().enumerate() {
                            *dst += is * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for (j, (gv, xh)) in g.iter().zip(normalized).enumerate() {
                        gg[j % d] += gv * xh;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for (j, gv) in g.iter().enumerate() {
                        gb[j % d] += gv;
                    }
                }
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(p, w) in parts {
                    if let Some(gp) = slot(nodes, grads, p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            &Op::Narrow { x, start, width } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let len = nodes[i].value.shape().last().copied().unwrap_or(1);
                    for (r, chunk) in g.chunks(len).enumerate() {
                        add_into(&mut gx[r * width + start..r * width + start + len], chunk);
                    }
                }
            }
            Op::GatherRows { src, index, row } => {
                if let Some(gs) = slot(nodes, grads, *src) {
                    for (o, idx) in index.iter().enumerate() {
                        if let Some(s) = *idx {
                            add_into(&mut gs[s * row..(s + 1) * row], &g[o * row..(o + 1) * row]);
                        }
                    }
                }
            }
            Op::Stack { parts, outer, inner } => {
                let len = parts.len();
                for (pi, &p) in parts.iter().enumerate() {
                    if let Some(gp) = slot(nodes, grads, p) {
                        for o in 0..*outer {
                            let base = (o * len + pi) * inner;
                            add_into(&mut gp[o * inner..(o + 1) * inner], &g[base..base + inner]);
                        }
                    }
                }
            }
            &Op::Select {
                x,
                outer,
                len,
                inner,
                index,
            } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        let base = (o * len + index) * inner;
                        add_into(&mut gx[base..base + inner], &g[o * inner..(o + 1) * inner]);
                    }
                }
            }
            Op::MaskRows { x, keep } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let row = g.len() / keep.len();
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut gx[r * row..(r + 1) * row], &g[r * row..(r + 1) * row]);
                        }
                    }
                }
            }
            Op::WhereRows { cond, a, b } => {
                let row = g.len() / cond.len();
                for (target, want) in [(*a, true), (*b, false)] {
                    if let Some(gt) = slot(nodes, grads, target) {
                        for (r, &c) in cond.iter().enumerate() {
                            if c == want {
                                add_into(&mut gt[r * row..(r + 1) * row], &g[r * row..(r + 1) * row]);
                            }
                        }
                    }
                }
            }
            &Op::Sum { x } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::BceWithLogits { x, targets, weights } => {
                let vx = val(*x);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (j, d) in gx.iter_mut().enumerate() {
                        if weights[j] != 0.0 {
                            *d += g[0] * weights[j] * (sigmoid(vx[j]) - targets[j]);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                x,
                classes,
                targets,
                probs,
            } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        for c in 0..*classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gx[r * classes + c] += g[0] * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(eye, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let z = g.constant(Tensor::zeros(&[2, 3]));
        let any = g.constant(t(&[3, 4], &[1.5; 12]));
        let p = g.matmul(z, any).unwrap();
        assert_eq!(g.shape(p), &[2, 4]);
        assert!(g.value(p).data().iter().all(|&v| v == 0.0));

        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let p = g.matmul(m, b).unwrap();
        assert_eq!(g.value(p).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn batched_matmul_with_shared_and_batched_operands() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 2, 1], &[1.0, 1.0, 2.0, 0.0]));
        let p = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(p), &[2, 1, 1]);
        assert_eq!(g.value(p).data(), &[3.0, 6.0]);
        let w = g.constant(t(&[2, 1], &[1.0, -1.0]));
        let q = g.matmul(a, w).unwrap();
        assert_eq!(g.value(q).data(), &[-1.0, -1.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        for (input, expected) in [
            ([0.0, 0.0], [0.5, 0.5]),
            ([1000.0, 1000.0], [0.5, 0.5]),
            ([0.0, 3f64.ln()], [0.25, 0.75]),
        ] {
            let x = g.constant(Tensor::vector(&input));
            let y = g.softmax(x, 0).unwrap();
            for (a, b) in g.value(y).data().iter().zip(expected) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_along_inner_axis() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[5.0, 9.0]));
        let y = g.masked_softmax(x, &Mask::vector(&[true, false]), 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);

        let x = g.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        let y = g.masked_softmax(x, &Mask::vector(&[true, true, false]), 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.0]);

        let x = g.constant(Tensor::vector(&[0.0, 3f64.ln(), 7.0]));
        let y = g.masked_softmax(x, &Mask::vector(&[true, true, false]), 0).unwrap();
        let d = g.value(y).data();
        assert_abs_diff_eq!(d[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.75, epsilon = 1e-12);
        assert_eq!(d[2], 0.0);

        let x = g.constant(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(
            g.masked_softmax(x, &Mask::vector(&[false, false]), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[0.0, -3.0, 3.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);

        let x = g.constant(Tensor::vector(&[1.0, 3.0]));
        let gain = g.constant(Tensor::vector(&[1.0, 1.0]));
        let bias = g.constant(Tensor::vector(&[0.0, 0.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        // Two-pass reference: mean 2, population variance 1.
        let expected = [(1.0 - 2.0) / (1.0f64 + 1e-5).sqrt(), (3.0 - 2.0) / (1.0f64 + 1e-5).sqrt()];
        for (a, b) in g.value(y).data().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g.value(y).data()[0], -1.0, epsilon = 1e-5);

        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        let c = g.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(g.concat_last(&[a, c]), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, -2.0, 0.5]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[0.0]));
        let s = g.sigmoid(x);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25]);

        // Repeated calls accumulate.
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_tensor_sums_branch_gradients() {
        // loss = sum(x * x) + sum(x): d/dx = 2x + 1
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[1.0, -3.0]));
        let sq = g.mul(x, x).unwrap();
        let both = g.add(sq, x).unwrap();
        let l = g.sum(both);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, -5.0]);
    }

    #[test]
    fn permute_roundtrip() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>()));
        let p = g.permute(x, &[1, 0, 2]).unwrap();
        assert_eq!(g.shape(p), &[3, 2, 2]);
        assert_eq!(g.value(p).get(&[2, 1, 0]).unwrap(), g.value(x).get(&[1, 2, 0]).unwrap());
        let back = g.permute(p, &[1, 0, 2]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn gather_stack_select_and_row_ops() {
        let mut g = Graph::new();
        let table = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let rows = g.gather_rows(table, &[Some(2), None, Some(0)]).unwrap();
        assert_eq!(g.value(rows).data(), &[5.0, 6.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(matches!(g.gather_rows(table, &[Some(3)]), Err(Error::Index { .. })));

        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let s = g.stack(&[a, b], 1).unwrap();
        assert_eq!(g.shape(s), &[2, 2, 2]);
        assert_eq!(g.value(s).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let back = g.select(s, 1, 1).unwrap();
        assert_eq!(g.value(back), g.value(b));

        let m = g.mask_rows(a, &[false, true]).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0, 3.0, 4.0]);
        let w = g.where_rows(&[true, false], a, b).unwrap();
        assert_eq!(g.value(w).data(), &[1.0, 2.0, 7.0, 8.0]);
    }

    #[test]
    fn fused_losses() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(&[0.0, 0.0]));
        let l = g.bce_with_logits(z, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(g.value(l).item().unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-12);

        let z = g.constant(t(&[2, 5], &[0.0; 10]));
        let l = g.cross_entropy(z, &[Some(1), None]).unwrap();
        assert_abs_diff_eq!(g.value(l).item().unwrap(), 5f64.ln(), epsilon = 1e-12);
    }
}
