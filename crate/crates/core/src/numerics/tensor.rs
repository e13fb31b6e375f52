//! Dense row-major `f64` tensors.
//!
//! Every operation in the crate works on rank-1 or rank-2 tensors. A rank-1
//! tensor of length `n` behaves as a `1 × n` row wherever a matrix is needed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(shape_err("Tensor::new", format!("unsupported shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    /// Unchecked constructor for kernels whose output shape is correct by construction.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("Tensor::from_rows", "ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn i.i.d. from `N(0, std²)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)`, treating a rank-1 tensor as one row.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("tensors are rank 1 or 2"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.is_empty() || shape.len() > 2 {
            return Err(shape_err("Tensor::reshaped", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims();
        let (k2, n) = other.dims();
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} · {k2}x{n}")));
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
        Ok(Tensor::from_parts(m, n, out))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(c, r, out)
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.dims();
        if bias.len() != c {
            return Err(shape_err("add_row_vector", format!("{r}x{c} + bias[{}]", bias.len())));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Tensor::from_parts(r, c, data))
    }

    /// Rows selected by `idx`, in order (repeats allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(shape_err("gather_rows", format!("row {i} of {r}")));
            }
            data.extend_from_slice(self.row(i));
        }
        if idx.is_empty() {
            return Err(shape_err("gather_rows", "no rows selected"));
        }
        Ok(Tensor::from_parts(idx.len(), c, data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on {:?} vs {:?}", self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `x · W + bias`, with `bias` broadcast over rows.
pub fn linear_apply(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = x.matmul(w)?;
    match bias {
        Some(b) => y.add_row_vector(b),
        None => Ok(y),
    }
}

/// Row-wise softmax; max-subtracted so it is exact under per-row shifts.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    masked_softmax_rows(x, None)
}

/// Softmax over the allowed entries of each row. Disallowed entries get weight exactly zero.
pub(crate) fn masked_softmax_rows(x: &Tensor, allowed: Option<&[bool]>) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("softmax_rows"));
    }
    let (r, c) = x.dims();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let ok = |j: usize| allowed.is_none_or(|m| m[i * c + j]);
        let max = (0..c).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Mask { row: i });
        }
        let o = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for j in 0..c {
            if ok(j) {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(r, c, out))
}
