//! Dense row-major `f64` arrays.
//!
//! Most of the model works on rank-2 tensors (`rows × cols`); scalars carry
//! an empty shape. The methods here are gradient-free; the taped versions
//! live on [`crate::compute::Var`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::dim(
                "elementwise",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.numel() != self.cols() {
            return Err(Error::dim(
                "add_row",
                format!("bias of {} for {} columns", bias.numel(), self.cols()),
            ));
        }
        let mut out = self.clone();
        let c = self.cols();
        for row in out.data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} · {:?}", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// Row-wise softmax. Columns flagged in `mask` get probability exactly 0;
    /// a row whose columns are all masked comes out as zeros.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Tensor {
        let c = self.cols();
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            softmax_in_place(row, mask);
        }
        out
    }

    /// Row-wise layer normalisation with `1 × cols` gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if gain.numel() != c || bias.numel() != c {
            return Err(Error::dim("layer_norm", "gain/bias width"));
        }
        let (mut out, _) = normalize_rows(self);
        for row in out.data.chunks_mut(c) {
            for ((v, g), b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
                *v = *v * g + b;
            }
        }
        Ok(out)
    }

    /// Mean of the rows not flagged in `mask`, as a `1 × cols` tensor.
    pub fn mean_rows(&self, mask: Option<&[bool]>) -> Result<Tensor> {
        let c = self.cols();
        let mut acc = vec![0.0; c];
        let mut n = 0usize;
        for r in 0..self.rows() {
            if mask.is_some_and(|m| m[r]) {
                continue;
            }
            n += 1;
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        if n == 0 {
            return Err(Error::Contract("mean over zero unmasked rows".into()));
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Tensor::matrix(1, c, acc)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows());
        if parts.iter().any(|t| t.rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(r));
            }
        }
        Tensor::matrix(rows, cols, data)
    }

    pub fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
        let cols = rows.first().map_or(0, |t| t.numel());
        if rows.iter().any(|t| t.numel() != cols) {
            return Err(Error::dim("stack_rows", "row widths differ"));
        }
        let data = rows.iter().flat_map(|t| t.data.iter().copied()).collect();
        Tensor::matrix(rows.len(), cols, data)
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// `(x − mean) / sqrt(var + ε)` per row, with the per-row `1 / sqrt(var + ε)`.
pub(crate) fn normalize_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let c = x.cols();
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..c {
            xhat[r * c + j] = (row[j] - mean) * inv;
        }
        inv_std.push(inv);
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: xhat,
        },
        inv_std,
    )
}

pub(crate) fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let masked = |j: usize| mask.is_some_and(|m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| !masked(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if masked(j) {
            *v = 0.0;
        } else {
            *v = (*v - max).exp();
            total += *v;
        }
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}
