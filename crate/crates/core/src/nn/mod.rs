//! A small from-scratch neural network kit: dense tensors, layers with
//! explicit backward passes, and first-order optimizers.
//!
//! Forward passes never mutate a network, so a built network can be shared
//! across threads for inference. Training goes through [`Sequential::forward_tape`]
//! and [`Sequential::backward`], which return gradients instead of storing them.

mod gemm;
mod layer;
mod optim;

pub use layer::{sigmoid, Grads, Init, Layer, Sequential, Tape};
pub use optim::{Adam, Sgd};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch row.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Stacks equally shaped rows into a batch.
    pub fn stack(rows: &[&[f64]], row_shape: &[usize]) -> Self {
        let n: usize = row_shape.iter().product();
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            assert_eq!(r.len(), n);
            data.extend_from_slice(r);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(row_shape);
        Tensor { shape, data }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.row(i)).collect();
        Tensor::stack(&rows, &self.shape[1..])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Finite-difference helpers for verifying analytic gradients.
pub mod gradcheck {
    /// Symmetric relative error with an absolute floor for tiny gradients.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / scale
        }
    }

    /// Central difference of `f` with respect to `x[i]`.
    pub fn central_difference(x: &mut [f64], i: usize, eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(x);
        x[i] = orig - eps;
        let minus = f(x);
        x[i] = orig;
        (plus - minus) / (2.0 * eps)
    }
}
