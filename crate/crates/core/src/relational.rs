//! The per-triplet relational encoder.
//!
//! Each triplet is a three-token sequence (subject, relation, object). A layer
//! runs self-attention over the three tokens, attends to a persistent memory
//! bank, mixes both through a sigmoid gate with a skip connection, and then
//! fuses cross-attention over every global-context layer (meshed fusion).
//!
//! All triplets of a scene are processed together as a `3N × h` matrix with
//! rows `3i, 3i+1, 3i+2` holding triplet `i`; a block-diagonal mask keeps the
//! self-attention inside each triplet.

use rand::Rng;

use crate::attention::{feed_forward_block, multi_head_attention, AttentionMask, AttentionParams, FeedForwardParams, Linear};
use crate::error::{shape_err, Error, Result};
use crate::global_encoder::LayerStack;
use crate::numerics::{ParamId, ParamInit, Tape, Tensor, Var};

/// Std of the initial memory slots.
pub const MEMORY_INIT_STD: f64 = 0.02;

/// Tokens per triplet: subject, relation, object.
pub const TOKENS: usize = 3;

/// `α = σ([x ; y] W + b)` with `W: 2h × h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GateParams {
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, name: &str, hidden: usize) -> Self {
        Self {
            weight: init.weight(format!("{name}.weight"), 2 * hidden, hidden),
            bias: init.full(format!("{name}.bias"), &[hidden], 0.0),
        }
    }
}

pub struct GateOutput {
    /// `α ⊙ x + (J − α) ⊙ y`
    pub fused: Var,
    /// `J − α`, the weight given to `y`.
    pub complement: Var,
}

pub fn gate_fuse(tape: &mut Tape<'_>, x: Var, y: Var, gate: &GateParams) -> Result<GateOutput> {
    if !tape.value(x).same_shape(tape.value(y)) {
        return Err(shape_err("gate_fuse", "inputs differ in shape"));
    }
    let xy = tape.concat_cols(&[x, y])?;
    let w = tape.param(gate.weight);
    let b = tape.param(gate.bias);
    let pre = tape.matmul(xy, w)?;
    let pre = tape.add_bias(pre, b)?;
    let alpha = tape.sigmoid(pre);
    let complement = tape.affine(alpha, -1.0, 1.0);
    let fused = tape.mix(alpha, x, y)?;
    Ok(GateOutput { fused, complement })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryParams {
    /// `m × h` persistent slots, used as both keys and values.
    pub bank: ParamId,
    pub attention: AttentionParams,
    pub gate: GateParams,
}

/// Cross-attention and gate per global layer, then a shared MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshedParams {
    pub cross: Vec<AttentionParams>,
    pub gates: Vec<GateParams>,
    pub mlp: FeedForwardParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationalLayerParams {
    pub self_attention: AttentionParams,
    pub memory: Option<MemoryParams>,
    pub meshed: MeshedParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationalEncoderParams {
    pub hidden: usize,
    /// Shared `D → h` projection of the three inputs.
    pub input: Linear,
    /// `3 × h` learnable positional rows for subject, relation, object.
    pub positions: ParamId,
    pub layers: Vec<RelationalLayerParams>,
}

/// Sizes and switches for [`RelationalEncoderParams::init`].
#[derive(Clone, Copy, Debug)]
pub struct RelationalShape {
    pub feature_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub memory_slots: usize,
    /// Number of global layers to fuse; 0 removes meshed fusion.
    pub global_layers: usize,
    pub use_memory: bool,
}

impl RelationalEncoderParams {
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, shape: RelationalShape) -> Result<Self> {
        let RelationalShape { feature_dim, hidden, heads, layers, memory_slots, global_layers, use_memory } = shape;
        if layers == 0 {
            return Err(Error::Config("relational encoder needs at least one layer".into()));
        }
        if use_memory && memory_slots == 0 {
            return Err(Error::Config("memory needs at least one slot".into()));
        }
        let input = Linear::init(init, "rel.input", feature_dim, hidden, true);
        let positions = init.normal("rel.positions", &[TOKENS, hidden], 1.0);
        let mut out = Vec::with_capacity(layers);
        for p in 0..layers {
            let name = format!("rel.layer{p}");
            let self_attention = AttentionParams::init(init, &format!("{name}.self_attn"), hidden, heads, false)?;
            let memory = if use_memory {
                Some(MemoryParams {
                    bank: init.normal(format!("{name}.memory"), &[memory_slots, hidden], MEMORY_INIT_STD),
                    attention: AttentionParams::init(init, &format!("{name}.mem_attn"), hidden, heads, false)?,
                    gate: GateParams::init(init, &format!("{name}.mem_gate"), hidden),
                })
            } else {
                None
            };
            let mut cross = Vec::with_capacity(global_layers);
            let mut gates = Vec::with_capacity(global_layers);
            for l in 0..global_layers {
                cross.push(AttentionParams::init(init, &format!("{name}.cross{l}"), hidden, heads, false)?);
                gates.push(GateParams::init(init, &format!("{name}.cross_gate{l}"), hidden));
            }
            let mlp = FeedForwardParams::init(init, &format!("{name}.mlp"), hidden);
            out.push(RelationalLayerParams {
                self_attention,
                memory,
                meshed: MeshedParams { cross, gates, mlp },
            });
        }
        Ok(Self {
            hidden,
            input,
            positions,
            layers: out,
        })
    }
}

/// `X_0[k] = input_k · P + b + pos[k]` for `k ∈ {s, r, o}`, for one triplet.
pub fn embed_triplet_positions(
    tape: &mut Tape<'_>,
    subject: Var,
    relation: Var,
    object: Var,
    params: &RelationalEncoderParams,
) -> Result<Var> {
    let stacked = stack_rows(tape, &[subject, relation, object])?;
    embed_tokens(tape, stacked, 1, params)
}

fn stack_rows(tape: &mut Tape<'_>, rows: &[Var]) -> Result<Var> {
    // (a; b; c) = [aᵀ bᵀ cᵀ]ᵀ
    let cols: Vec<Var> = rows.iter().map(|&r| tape.transpose(r)).collect();
    let cat = tape.concat_cols(&cols)?;
    Ok(tape.transpose(cat))
}

/// Embeds `3N × D` token features for `triplets = N` triplets.
pub fn embed_tokens(tape: &mut Tape<'_>, tokens: Var, triplets: usize, params: &RelationalEncoderParams) -> Result<Var> {
    if tape.value(tokens).rows() != TOKENS * triplets {
        return Err(shape_err("embed_tokens", "expected three rows per triplet"));
    }
    let x = params.input.apply(tape, tokens)?;
    let pos = tape.param(params.positions);
    let idx: Vec<usize> = (0..triplets).flat_map(|_| 0..TOKENS).collect();
    let pos = tape.gather_rows(pos, &idx)?;
    tape.add(x, pos)
}

/// Memory read: `X_prev` queries the bank, which serves as keys and values.
pub fn memory_attend(tape: &mut Tape<'_>, x_prev: Var, memory: &MemoryParams) -> Result<Var> {
    let bank = tape.param(memory.bank);
    multi_head_attention(tape, x_prev, bank, bank, &memory.attention, None)
}

/// `MLP(mean_l g(X̄, attn(X̄, z_l, z_l))) + X̄`.
pub fn meshed_fuse(tape: &mut Tape<'_>, x_bar: Var, stack: &LayerStack, params: &MeshedParams) -> Result<Var> {
    if stack.is_empty() {
        return Err(Error::Config("meshed fusion needs a non-empty layer stack".into()));
    }
    if stack.len() != params.cross.len() {
        return Err(Error::Config(format!(
            "layer stack has {} layers, fusion configured for {}",
            stack.len(),
            params.cross.len()
        )));
    }
    let rows = tape.value(x_bar).rows();
    let mask = if stack.valid.iter().all(|&v| v) {
        None
    } else {
        Some(AttentionMask::key_padding(rows, &stack.valid)?)
    };
    let mut fused = Vec::with_capacity(stack.len());
    for ((&z, cross), gate) in stack.layers.iter().zip(&params.cross).zip(&params.gates) {
        let zp = multi_head_attention(tape, x_bar, z, z, cross, mask.as_ref())?;
        fused.push(gate_fuse(tape, x_bar, zp, gate)?.fused);
    }
    let sum = tape.add_n(&fused)?;
    let mean = tape.scale(sum, 1.0 / stack.len() as f64);
    let m = feed_forward_block(tape, mean, &params.mlp)?;
    tape.add(m, x_bar)
}

pub struct RelationalLayerOutput {
    pub output: Var,
    /// `J − α` of the memory gate; `None` when memory is disabled.
    pub memory_scores: Option<Var>,
}

/// One relational layer over `3N` token rows.
///
/// Without a layer stack the fusion term is replaced by `MLP(0)`, so
/// `X_p = X̄_p + MLP(0)`.
pub fn relational_layer(
    tape: &mut Tape<'_>,
    x_prev: Var,
    params: &RelationalLayerParams,
    stack: Option<&LayerStack>,
    self_mask: Option<&AttentionMask>,
) -> Result<RelationalLayerOutput> {
    let att = multi_head_attention(tape, x_prev, x_prev, x_prev, &params.self_attention, self_mask)?;
    let (mixed, memory_scores) = match &params.memory {
        Some(memory) => {
            let mem = memory_attend(tape, x_prev, memory)?;
            let g = gate_fuse(tape, att, mem, &memory.gate)?;
            (g.fused, Some(g.complement))
        }
        None => (att, None),
    };
    let x_bar = tape.add(mixed, x_prev)?;
    let output = match stack {
        Some(z) => meshed_fuse(tape, x_bar, z, &params.meshed)?,
        None => {
            let zeros = tape.constant(Tensor::zeros(&[tape.value(x_bar).rows(), tape.value(x_bar).cols()]));
            let m = feed_forward_block(tape, zeros, &params.meshed.mlp)?;
            tape.add(m, x_bar)?
        }
    };
    Ok(RelationalLayerOutput { output, memory_scores })
}

pub struct RelationalOutput {
    /// `3N × h` final states.
    pub output: Var,
    /// Memory gate complements per layer (empty without memory).
    pub memory_scores: Vec<Var>,
}

/// Runs the full encoder over the `3N × D` token features of a scene.
pub fn encode_relations(
    tape: &mut Tape<'_>,
    tokens: &Tensor,
    params: &RelationalEncoderParams,
    stack: Option<&LayerStack>,
) -> Result<RelationalOutput> {
    let rows = tokens.rows();
    if !rows.is_multiple_of(TOKENS) {
        return Err(shape_err("encode_relations", "token rows not a multiple of three"));
    }
    let n = rows / TOKENS;
    let mask = (n > 1).then(|| AttentionMask::block_diagonal(n, TOKENS)).transpose()?;
    let tokens = tape.constant(tokens.clone());
    let mut x = embed_tokens(tape, tokens, n, params)?;
    let mut memory_scores = Vec::new();
    for layer in &params.layers {
        let out = relational_layer(tape, x, layer, stack, mask.as_ref())?;
        x = out.output;
        memory_scores.extend(out.memory_scores);
    }
    Ok(RelationalOutput { output: x, memory_scores })
}
