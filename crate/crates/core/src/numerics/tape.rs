//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as it is evaluated. Node ids are handed
//! out in creation order, so walking the node list backwards is a valid
//! topological order for the backward pass. Each operation owns its own
//! closed-form vector-Jacobian product; `grad_check` is the contract that
//! keeps them honest.

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::masked_softmax_rows;
use super::{ParamId, ParamSet, Tensor};
use crate::error::{shape_err, Error, Result};

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Focusing exponent and softmax temperature of a classification loss node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct FocalSpec {
    pub gamma: f64,
    pub tau: f64,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Mix { alpha: Var, x: Var, y: Var },
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Rc<[usize]> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    AddN(Vec<Var>),
    SumAll(Var),
    ClassLoss { logits: Var, targets: Rc<[usize]>, weights: Rc<[f64]>, spec: FocalSpec, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation so that gradients of a scalar output can be replayed.
pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    softmax_nodes: Vec<(Var, Option<Rc<[bool]>>)>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'p> Tape<'p> {
    /// A tape with no parameters; only constants can be introduced.
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            softmax_nodes: Vec::new(),
            dropout: None,
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Makes [`Tape::dropout`] zero entries with probability `rate`, drawing
    /// masks from `seed`. Without this call dropout is the identity.
    pub fn enable_dropout(&mut self, rate: f64, seed: u64) {
        self.dropout = (rate > 0.0).then(|| (rate, ChaCha8Rng::seed_from_u64(seed)));
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - *rate;
        let (r, c) = self.nodes[x.0].value.dims();
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::from_parts(r, c, mask));
        self.mul(x, m)
    }

    pub fn params(&self) -> Option<&'p ParamSet> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a registered parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let params = self.params.expect("tape has no parameter set");
        let v = self.push(params.get(id).clone(), Op::Leaf, true);
        self.param_vars.insert(id, v);
        v
    }

    /// Values of every softmax evaluated so far, with the mask each one used.
    pub fn attention_maps(&self) -> impl Iterator<Item = (&Tensor, Option<&[bool]>)> + '_ {
        self.softmax_nodes
            .iter()
            .map(|(v, m)| (self.value(*v), m.as_deref()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row_vector(self.value(bias))?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `α ⊙ x + (1 − α) ⊙ y`, kept inside `[min(x, y), max(x, y)]` despite rounding.
    pub fn mix(&mut self, alpha: Var, x: Var, y: Var) -> Result<Var> {
        let (a, xv, yv) = (self.value(alpha), self.value(x), self.value(y));
        if !a.same_shape(xv) || !a.same_shape(yv) {
            return Err(shape_err("mix", "weights and inputs differ in shape"));
        }
        let data = a
            .data()
            .iter()
            .zip(xv.data().iter().zip(yv.data()))
            .map(|(&w, (&p, &q))| (w * p + (1.0 - w) * q).clamp(p.min(q), p.max(q)))
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(alpha) || self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::Mix { alpha, x, y }, rg))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Row softmax. With a mask, disallowed entries receive exactly zero weight.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        if let Some(m) = &mask {
            if m.len() != self.value(x).len() {
                return Err(shape_err("softmax_rows", "mask size differs from scores"));
            }
        }
        let value = masked_softmax_rows(self.value(x), mask.as_deref())?;
        let rg = self.rg(x);
        let v = self.push(value, Op::Softmax(x), rg);
        self.softmax_nodes.push((v, mask));
        Ok(v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(rows, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims();
        if len == 0 || start + len > c {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(r, len, data), Op::SliceCols { x, start }, rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(x).gather_rows(idx)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows { x, idx: idx.into() }, rg))
    }

    /// Per-row layer normalization with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims();
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err("layer_norm", "gain/bias width differs from input"));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let xhat = Tensor::from_parts(r, c, xhat);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = row[j] * g.data()[j] + b.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims();
        let mut norms = Vec::with_capacity(r);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::NonFinite("normalize_rows (zero vector)"));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(r, c, data), Op::NormalizeRows { x, norms }, rg))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            if !self.value(p).same_shape(&acc) {
                return Err(shape_err("add_n", "shapes differ"));
            }
            acc.add_assign(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(acc, Op::AddN(parts.to_vec()), rg))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(1, 1, vec![s]), Op::SumAll(x), rg)
    }

    /// Mean over rows of `-w_i (1 - p_i)^gamma log p_i`, where `p_i` is the softmax
    /// probability of `targets[i]` under `logits / tau`.
    pub(crate) fn class_loss(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        spec: FocalSpec,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.dims();
        if targets.len() != n || weights.len() != n {
            return Err(shape_err("class_loss", "targets/weights length differs from batch"));
        }
        if spec.tau <= 0.0 || !spec.tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", spec.tau)));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let t = targets[i];
            if t >= c {
                return Err(Error::LabelOutOfRange { id: t, size: c });
            }
            let z: Vec<f64> = lv.row(i).iter().map(|v| v / spec.tau).collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for j in 0..c {
                probs[i * c + j] = (z[j] - lse).exp();
            }
            let log_pt = z[t] - lse;
            let pt = log_pt.exp();
            let focal = if spec.gamma == 0.0 { 1.0 } else { (1.0 - pt).powf(spec.gamma) };
            total += -weights[i] * focal * log_pt;
        }
        let value = Tensor::from_parts(1, 1, vec![total / n as f64]);
        if !value.is_finite() {
            return Err(Error::NonFinite("class_loss"));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::ClassLoss {
                logits,
                targets: targets.into(),
                weights: weights.into(),
                spec,
                probs: Tensor::from_parts(n, c, probs),
            },
            rg,
        ))
    }

    /// Gradients of the one-element tensor `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a single value"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        // Rank-1 values (biases) receive rank-1 gradients.
        let g = if g.shape() != self.value(v).shape() {
            Tensor::from_parts(1, g.len(), g.into_data())
                .reshaped(self.value(v).shape().to_vec())
                .expect("gradient size matches value size")
        } else {
            g
        };
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *bias, column_sums(g));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?);
                }
            }
            Op::Mix { alpha, x, y } => {
                let a = self.value(*alpha);
                if self.rg(*alpha) {
                    let d = self.value(*x).sub(self.value(*y))?;
                    self.accumulate(grads, *alpha, g.hadamard(&d)?);
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.hadamard(a)?);
                }
                if self.rg(*y) {
                    let c = a.map(|w| 1.0 - w);
                    self.accumulate(grads, *y, g.hadamard(&c)?);
                }
            }
            Op::Affine { x, scale } => self.accumulate(grads, *x, g.scale(*scale)),
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, "sigmoid_grad", |g, y| g * y * (1.0 - y))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), "relu_grad", |g, v| if v > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (r, c) = y.dims();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(r, c, gx));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(rows, w, data));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims();
                let w = g.cols();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, Tensor::from_parts(r, c, gx));
            }
            Op::GatherRows { x, idx } => {
                let (r, c) = self.value(*x).dims();
                let mut gx = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, s) in gx[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(r, c, gx));
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = xhat.dims();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *bias, column_sums(g));
                self.accumulate(grads, *gain, column_sums(&g.hadamard(xhat)?));
                if self.rg(*x) {
                    let mut gx = vec![0.0; r * c];
                    let n = c as f64;
                    for i in 0..r {
                        let xh = xhat.row(i);
                        let gxh: Vec<f64> = g.row(i).iter().zip(gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = gxh.iter().sum();
                        let s2: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = inv_std[i] / n * (n * gxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(r, c, gx));
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let (r, c) = y.dims();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = (gr[j] - yr[j] * dot) / norms[i];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(r, c, gx));
            }
            Op::AddN(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, g.clone());
                }
            }
            Op::SumAll(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.data()[0]));
            }
            Op::ClassLoss { logits, targets, weights, spec, probs } => {
                let (n, c) = probs.dims();
                let upstream = g.data()[0] / n as f64;
                let mut gl = vec![0.0; n * c];
                for i in 0..n {
                    let t = targets[i];
                    let p = probs.row(i);
                    let pt = p[t];
                    let log_pt = pt.ln();
                    let q = 1.0 - pt;
                    // dL/dp_t for L = -w (1 - p_t)^gamma log p_t
                    let mut dpt = q.powf(spec.gamma) / pt;
                    if spec.gamma != 0.0 && q > 0.0 {
                        dpt -= spec.gamma * q.powf(spec.gamma - 1.0) * log_pt;
                    }
                    let dpt = -weights[i] * dpt;
                    for j in 0..c {
                        let delta = if j == t { 1.0 } else { 0.0 };
                        gl[i * c + j] = upstream * dpt * pt * (delta - p[j]) / spec.tau;
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_parts(n, c, gl));
            }
        }
        Ok(())
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter; `None` if the parameter never reached the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars.get(&id).and_then(|v| self.wrt(*v))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let (r, c) = g.dims();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::from_parts(1, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradients_match_hand_values() {
        let mut tape = Tape::new();
        let mut ps = ParamSet::new();
        let a_id = ps.add("a", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b_id = ps.add("b", Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        tape.params = Some(&ps);
        let a = tape.param(a_id);
        let b = tape.param(b_id);
        let y = tape.matmul(a, b).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.param(a_id).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.param(b_id).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::ones(&[2, 2]));
        let s = tape.sum_all(c);
        let grads = tape.backward(s).unwrap();
        assert!(grads.wrt(c).is_none());
    }

    #[test]
    fn bias_gradient_keeps_rank_one_shape() {
        let mut ps = ParamSet::new();
        let b_id = ps.add("b", Tensor::vector(vec![0.0, 0.0]).unwrap());
        let mut tape = Tape::with_params(&ps);
        let x = tape.constant(Tensor::ones(&[3, 2]));
        let b = tape.param(b_id);
        let y = tape.add_bias(x, b).unwrap();
        let s = tape.sum_all(y);
        let grads = tape.backward(s).unwrap();
        let gb = grads.param(b_id).unwrap();
        assert_eq!(gb.shape(), &[2]);
        assert_eq!(gb.data(), &[3.0, 3.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::ones(&[2, 2]));
        assert!(tape.backward(c).is_err());
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(tape.normalize_rows(c).is_err());
    }

    #[test]
    fn dropout_is_seeded_and_rescales() {
        let run = |seed| {
            let mut tape = Tape::new();
            tape.enable_dropout(0.5, seed);
            let x = tape.constant(Tensor::from_parts(1, 4000, vec![1.0; 4000]));
            let y = tape.dropout(x).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        assert_ne!(a, run(4));
        assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_parts(1, 2, vec![1.0, 2.0]));
        assert_eq!(tape.dropout(x).unwrap(), x);
    }

    #[test]
    fn mix_stays_between_its_inputs() {
        let mut tape = Tape::new();
        // 0.85·(-0.87) + 0.15·(-0.87) rounds to -0.8699999999999999 without the clamp
        let a = tape.constant(Tensor::from_parts(1, 3, vec![0.85, 0.25, 1.0]));
        let x = tape.constant(Tensor::from_parts(1, 3, vec![-0.87, -2.0, 3.0]));
        let y = tape.constant(Tensor::from_parts(1, 3, vec![-0.87, 2.0, -1.0]));
        let m = tape.mix(a, x, y).unwrap();
        assert_eq!(tape.value(m).data(), &[-0.87, 1.0, 3.0]);
        let bad = tape.constant(Tensor::from_parts(1, 2, vec![0.5, 0.5]));
        assert!(tape.mix(bad, x, y).is_err());
    }
}
