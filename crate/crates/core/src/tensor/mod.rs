//! Dense `f64` tensors with a tape-based reverse-mode autodiff [`Graph`],
//! a named parameter store and the Adam optimizer.
//!
//! Storage is always row-major and contiguous. Operations that rearrange
//! elements (transpose, permute) materialize a fresh buffer, so every
//! backward rule works on plain flat slices.

mod adam;
mod gemm;
mod graph;
pub mod gradcheck;
mod params;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use params::{Init, Param, ParamId, ParamStore};

use crate::error::{Error, Result};

/// A dense row-major array of `f64` values.
///
/// A scalar has the empty shape `[]` and holds one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// 1-d tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-d tensor from nested rows; all rows must share one length.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("matrix", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements. The shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// New tensor with the same elements under a different shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Element at a multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.shape.len() {
            return Err(Error::shape("get", &self.shape, index));
        }
        let mut offset = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Index { index: i, size: d });
            }
            offset = offset * d + i;
        }
        Ok(self.data[offset])
    }

    /// Contiguous slab at a prefix index, e.g. `row(&[b, t])` of a `[B, T, H]` tensor.
    pub fn row(&self, prefix: &[usize]) -> Result<&[f64]> {
        if prefix.len() > self.shape.len() {
            return Err(Error::shape("row", &self.shape, prefix));
        }
        let mut offset = 0;
        for (&i, &d) in prefix.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Index { index: i, size: d });
            }
            offset = offset * d + i;
        }
        let width: usize = self.shape[prefix.len()..].iter().product();
        Ok(&self.data[offset * width..(offset + 1) * width])
    }
}

/// Boolean mask with its own shape, broadcast against a tensor with
/// right-aligned rules (size-1 or missing leading axes repeat).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("mask", &shape, &[data.len()]));
        }
        Ok(Mask { shape, data })
    }

    pub fn vector(values: &[bool]) -> Self {
        Mask {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Expands the mask to `target` shape, returning one flag per element.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Vec<bool>> {
        if self.shape.len() > target.len() {
            return Err(Error::shape("mask broadcast", &self.shape, target));
        }
        let pad = target.len() - self.shape.len();
        let mut strides = vec![0usize; target.len()];
        let mut stride = 1;
        for (i, &d) in self.shape.iter().enumerate().rev() {
            let t = target[pad + i];
            if d == t {
                strides[pad + i] = stride;
            } else if d != 1 {
                return Err(Error::shape("mask broadcast", &self.shape, target));
            }
            stride *= d;
        }
        let numel: usize = target.iter().product();
        let mut out = Vec::with_capacity(numel);
        let mut index = vec![0usize; target.len()];
        for _ in 0..numel {
            let offset: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(self.data[offset]);
            for axis in (0..target.len()).rev() {
                index[axis] += 1;
                if index[axis] < target[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(out)
    }
}
