//! Scene-level context: all triplets of a scene, packed as `[s ; r ; o]` rows,
//! run through an L-layer Transformer with no positional information.

use rand::Rng;

use crate::attention::{encoder_layer, AttentionMask, EncoderLayerParams, Linear};
use crate::data::SceneSample;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{ParamInit, Tape, Tensor, Var};

/// `N × 3D` matrix of concatenated triplet features, plus a validity flag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedTriplets {
    pub rows: Tensor,
    pub valid: Vec<bool>,
}

impl PackedTriplets {
    pub fn num_rows(&self) -> usize {
        self.valid.len()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows.cols() / 3
    }

    /// Appends `padding` rows (any content) flagged invalid.
    pub fn padded(&self, padding: &Tensor) -> Result<Self> {
        if padding.cols() != self.rows.cols() {
            return Err(shape_err("PackedTriplets::padded", "padding width differs"));
        }
        let mut data = self.rows.data().to_vec();
        data.extend_from_slice(padding.data());
        let total = self.num_rows() + padding.rows();
        let mut valid = self.valid.clone();
        valid.resize(total, false);
        Ok(Self {
            rows: Tensor::matrix(total, self.rows.cols(), data)?,
            valid,
        })
    }
}

/// Row `i` is `concat(s_i, r_i, o_i)`, in input order.
pub fn pack_triplets(scene: &SceneSample) -> Result<PackedTriplets> {
    let first = scene.triplets.first().ok_or_else(|| Error::EmptyScene(scene.id.clone()))?;
    let d = first.feature_dim();
    let mut data = Vec::with_capacity(scene.len() * 3 * d);
    for t in &scene.triplets {
        if t.subject.len() != d || t.relation.len() != d || t.object.len() != d {
            return Err(shape_err("pack_triplets", format!("scene {} mixes feature widths", scene.id)));
        }
        data.extend_from_slice(&t.subject);
        data.extend_from_slice(&t.relation);
        data.extend_from_slice(&t.object);
    }
    Ok(PackedTriplets {
        rows: Tensor::matrix(scene.len(), 3 * d, data)?,
        valid: vec![true; scene.len()],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEncoderParams {
    pub input: Linear,
    pub layers: Vec<EncoderLayerParams>,
}

impl GlobalEncoderParams {
    pub fn init<R: Rng>(
        init: &mut ParamInit<'_, R>,
        feature_dim: usize,
        hidden: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("global encoder needs at least one layer".into()));
        }
        Ok(Self {
            input: Linear::init(init, "global.input", 3 * feature_dim, hidden, true),
            layers: (0..layers)
                .map(|l| EncoderLayerParams::init(init, &format!("global.layer{l}"), hidden, heads))
                .collect::<Result<_>>()?,
        })
    }
}

/// Per-layer outputs `z_1 … z_L`, each `rows × h`, with the row validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<Var>,
    pub valid: Vec<bool>,
}

impl LayerStack {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

pub fn encode_scene(tape: &mut Tape<'_>, packed: &PackedTriplets, params: &GlobalEncoderParams) -> Result<LayerStack> {
    let n = packed.num_rows();
    let mask = if packed.num_valid() == n {
        None
    } else {
        Some(AttentionMask::key_padding(n, &packed.valid)?)
    };
    let x = tape.constant(packed.rows.clone());
    let mut z = params.input.apply(tape, x)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        z = encoder_layer(tape, z, layer, mask.as_ref())?;
        layers.push(z);
    }
    Ok(LayerStack {
        layers,
        valid: packed.valid.clone(),
    })
}
