//! Scaled dot-product attention, multi-head attention and the pre-norm
//! Transformer encoder layer shared by both encoders.

use std::rc::Rc;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{ParamId, ParamInit, Tape, Var};

/// Boolean `[rows × cols]` matrix of allowed query/key pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Rc<[bool]>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(shape_err("AttentionMask::new", format!("{} entries for {rows}x{cols}", allowed.len())));
        }
        if let Some(row) = (0..rows).find(|&r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(Error::Mask { row });
        }
        Ok(Self {
            rows,
            cols,
            allowed: allowed.into(),
        })
    }

    /// Every query may see exactly the keys flagged valid.
    pub fn key_padding(rows: usize, key_valid: &[bool]) -> Result<Self> {
        let allowed = (0..rows).flat_map(|_| key_valid.iter().copied()).collect();
        Self::new(rows, key_valid.len(), allowed)
    }

    /// `groups` independent blocks of `size` tokens attending only within their block.
    pub fn block_diagonal(groups: usize, size: usize) -> Result<Self> {
        let n = groups * size;
        let allowed = (0..n)
            .flat_map(|i| (0..n).map(move |j| i / size == j / size))
            .collect();
        Self::new(n, n, allowed)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }
}

/// Affine map `x · W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let weight = init.weight(format!("{name}.weight"), fan_in, fan_out);
        let bias = bias.then(|| init.full(format!("{name}.bias"), &[fan_out], 0.0));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNormParams {
    /// Identity-initialized: gain 1, bias 0.
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, name: &str, width: usize) -> Self {
        Self {
            gain: init.full(format!("{name}.gain"), &[width], 1.0),
            bias: init.full(format!("{name}.bias"), &[width], 0.0),
        }
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Projections for one attention block.
///
/// `W_q`, `W_k`, `W_v` are full `h × h` matrices; head `i` uses columns
/// `[i·h/heads, (i+1)·h/heads)` of each. `W_o` is optional.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub hidden: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: Option<ParamId>,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        init: &mut ParamInit<'_, R>,
        name: &str,
        hidden: usize,
        heads: usize,
        output_projection: bool,
    ) -> Result<Self> {
        if heads == 0 || hidden == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::Config(format!("hidden size {hidden} not divisible into {heads} heads")));
        }
        Ok(Self {
            hidden,
            heads,
            wq: init.weight(format!("{name}.wq"), hidden, hidden),
            wk: init.weight(format!("{name}.wk"), hidden, hidden),
            wv: init.weight(format!("{name}.wv"), hidden, hidden),
            wo: output_projection.then(|| init.weight(format!("{name}.wo"), hidden, hidden)),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

fn check_width(tape: &Tape<'_>, v: Var, hidden: usize, what: &str) -> Result<()> {
    let c = tape.value(v).cols();
    if c != hidden {
        return Err(shape_err("attention", format!("{what} width {c}, expected {hidden}")));
    }
    Ok(())
}

/// softmax(q kᵀ / √d) v for already-projected `q`, `k`, `v`.
fn attend(tape: &mut Tape<'_>, q: Var, k: Var, v: Var, d: usize, mask: Option<&AttentionMask>) -> Result<Var> {
    let (tq, tk) = (tape.value(q).rows(), tape.value(k).rows());
    if let Some(m) = mask {
        if m.dims() != (tq, tk) {
            return Err(shape_err("attention", format!("mask {:?} for {tq}x{tk} scores", m.dims())));
        }
    }
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scores, mask.map(|m| m.allowed.clone()))?;
    tape.matmul(weights, v)
}

/// Single-head attention with the block's full projections and `d = h`.
pub fn scaled_self_attention(
    tape: &mut Tape<'_>,
    query: Var,
    key: Var,
    value: Var,
    params: &AttentionParams,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    check_width(tape, query, params.hidden, "query")?;
    check_width(tape, key, params.hidden, "key")?;
    check_width(tape, value, params.hidden, "value")?;
    if tape.value(key).rows() != tape.value(value).rows() {
        return Err(shape_err("attention", "key and value row counts differ"));
    }
    let (wq, wk, wv) = (tape.param(params.wq), tape.param(params.wk), tape.param(params.wv));
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(key, wk)?;
    let v = tape.matmul(value, wv)?;
    attend(tape, q, k, v, params.hidden, mask)
}

/// Per-head attention on column slices, concatenated, then projected by `W_o` if present.
/// The result passes through [`Tape::dropout`].
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    query: Var,
    key: Var,
    value: Var,
    params: &AttentionParams,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    check_width(tape, query, params.hidden, "query")?;
    check_width(tape, key, params.hidden, "key")?;
    check_width(tape, value, params.hidden, "value")?;
    if tape.value(key).rows() != tape.value(value).rows() {
        return Err(shape_err("attention", "key and value row counts differ"));
    }
    let (wq, wk, wv) = (tape.param(params.wq), tape.param(params.wk), tape.param(params.wv));
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(key, wk)?;
    let v = tape.matmul(value, wv)?;
    let dh = params.head_dim();
    let out = if params.heads == 1 {
        attend(tape, q, k, v, dh, mask)?
    } else {
        let mut heads = Vec::with_capacity(params.heads);
        for i in 0..params.heads {
            let qh = tape.slice_cols(q, i * dh, dh)?;
            let kh = tape.slice_cols(k, i * dh, dh)?;
            let vh = tape.slice_cols(v, i * dh, dh)?;
            heads.push(attend(tape, qh, kh, vh, dh, mask)?);
        }
        tape.concat_cols(&heads)?
    };
    let out = match params.wo {
        Some(wo) => {
            let wo = tape.param(wo);
            tape.matmul(out, wo)?
        }
        None => out,
    };
    tape.dropout(out)
}

/// Two affine layers with a ReLU between them, `h → 4h → h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForwardParams {
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, name: &str, hidden: usize) -> Self {
        Self {
            inner: Linear::init(init, &format!("{name}.inner"), hidden, 4 * hidden, true),
            outer: Linear::init(init, &format!("{name}.outer"), 4 * hidden, hidden, true),
        }
    }
}

pub fn feed_forward_block(tape: &mut Tape<'_>, x: Var, params: &FeedForwardParams) -> Result<Var> {
    let a = params.inner.apply(tape, x)?;
    let a = tape.relu(a);
    let a = tape.dropout(a)?;
    params.outer.apply(tape, a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub attention_norm: LayerNormParams,
    pub feed_forward: FeedForwardParams,
    pub feed_forward_norm: LayerNormParams,
}

impl EncoderLayerParams {
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, name: &str, hidden: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: AttentionParams::init(init, &format!("{name}.attn"), hidden, heads, true)?,
            attention_norm: LayerNormParams::init(init, &format!("{name}.attn_norm"), hidden),
            feed_forward: FeedForwardParams::init(init, &format!("{name}.ffn"), hidden),
            feed_forward_norm: LayerNormParams::init(init, &format!("{name}.ffn_norm"), hidden),
        })
    }
}

/// Pre-norm encoder layer: `y = x + MHA(LN(x))`, `out = y + FFN(LN(y))`.
pub fn encoder_layer(
    tape: &mut Tape<'_>,
    x: Var,
    params: &EncoderLayerParams,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let n = params.attention_norm.apply(tape, x)?;
    let a = multi_head_attention(tape, n, n, n, &params.attention, mask)?;
    let y = tape.add(x, a)?;
    let n = params.feed_forward_norm.apply(tape, y)?;
    let f = feed_forward_block(tape, n, &params.feed_forward)?;
    tape.add(y, f)
}
