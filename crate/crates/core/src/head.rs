//! Triplet classification against projected label embeddings.
//!
//! Labels are represented by fixed pseudo-random unit vectors. A shared
//! two-layer MLP maps them into the hidden space, and each of `x_s`, `x_r`,
//! `x_o` is scored by cosine similarity against its vocabulary.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::Linear;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{FocalSpec, ParamInit, Tape, Tensor, Var};

pub const DEFAULT_EMBEDDING_DIM: usize = 300;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
/// Range of the inverse-frequency class weights.
pub const WCE_CLIP: (f64, f64) = (0.01, 100.0);

/// Which label space a vector belongs to. Subjects and objects share one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocab {
    Object,
    Relation,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unit vector of length `dim` determined by `(vocab, label_id, seed)`.
pub fn label_embedding(label_id: usize, vocab: Vocab, vocab_size: usize, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if label_id >= vocab_size {
        return Err(Error::LabelOutOfRange { id: label_id, size: vocab_size });
    }
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let tag = match vocab {
        Vocab::Object => 1,
        Vocab::Relation => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed ^ tag) ^ label_id as u64));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// Fixed label vectors for both vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddingTable {
    pub dim: usize,
    pub seed: u64,
    pub objects: Tensor,
    pub relations: Tensor,
}

impl LabelEmbeddingTable {
    pub fn build(num_objects: usize, num_relations: usize, dim: usize, seed: u64) -> Result<Self> {
        let table = |vocab, n| -> Result<Tensor> {
            let rows = (0..n)
                .map(|id| label_embedding(id, vocab, n, dim, seed))
                .collect::<Result<Vec<_>>>()?;
            Tensor::from_rows(&rows)
        };
        Ok(Self {
            dim,
            seed,
            objects: table(Vocab::Object, num_objects)?,
            relations: table(Vocab::Relation, num_relations)?,
        })
    }

    pub fn table(&self, vocab: Vocab) -> &Tensor {
        match vocab {
            Vocab::Object => &self.objects,
            Vocab::Relation => &self.relations,
        }
    }
}

/// `e → h → h` MLP with a ReLU, shared by both vocabularies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierParams {
    pub inner: Linear,
    pub outer: Linear,
}

impl ClassifierParams {
    /// The output bias starts small but nonzero so that a label whose hidden
    /// units are all inactive still projects to a nonzero vector.
    pub fn init<R: Rng>(init: &mut ParamInit<'_, R>, embedding_dim: usize, hidden: usize) -> Self {
        let inner = Linear::init(init, "classifier.inner", embedding_dim, hidden, true);
        let outer = Linear {
            weight: init.weight("classifier.outer.weight", hidden, hidden),
            bias: Some(init.normal("classifier.outer.bias", &[hidden], 0.02)),
        };
        Self { inner, outer }
    }
}

pub fn project_labels(tape: &mut Tape<'_>, table: &Tensor, params: &ClassifierParams) -> Result<Var> {
    let t = tape.constant(table.clone());
    let a = params.inner.apply(tape, t)?;
    let a = tape.relu(a);
    params.outer.apply(tape, a)
}

/// `n × C` cosines between the rows of `x` and of `projected`.
pub fn cosine_scores(tape: &mut Tape<'_>, x: Var, projected: Var) -> Result<Var> {
    if tape.value(x).cols() != tape.value(projected).cols() {
        return Err(shape_err("cosine_logits", "query and table widths differ"));
    }
    let xn = tape.normalize_rows(x)?;
    let tn = tape.normalize_rows(projected)?;
    let tt = tape.transpose(tn);
    tape.matmul(xn, tt)
}

/// Eager form of [`cosine_scores`].
pub fn cosine_logits(x: &Tensor, table: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(x.clone());
    let t = tape.constant(table.clone());
    let out = cosine_scores(&mut tape, x, t)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Ce,
    Wce,
    Focal,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "ce",
            LossMode::Wce => "wce",
            LossMode::Focal => "focal",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossMode::Ce),
            "wce" => Ok(LossMode::Wce),
            "focal" => Ok(LossMode::Focal),
            other => Err(Error::Config(format!("unknown loss {other:?}; expected ce, wce or focal"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Focusing exponent, read only in [`LossMode::Focal`].
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Ce,
            gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `w_c = median / f_c` over the nonzero counts, clipped to [`WCE_CLIP`].
/// Classes that never occur get the upper clip.
pub fn wce_class_weights(counts: &[usize]) -> Vec<f64> {
    let mut present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.is_empty() {
        return vec![1.0; counts.len()];
    }
    present.sort_unstable();
    let k = present.len();
    let median = if k % 2 == 1 {
        present[k / 2] as f64
    } else {
        (present[k / 2 - 1] + present[k / 2]) as f64 / 2.0
    };
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                WCE_CLIP.1
            } else {
                (median / c as f64).clamp(WCE_CLIP.0, WCE_CLIP.1)
            }
        })
        .collect()
}

/// Mean loss over the rows of `logits` for the given targets, with
/// probabilities `softmax(logits / temperature)`.
///
/// `class_weights` is only read in [`LossMode::Wce`].
pub fn loss_term(
    tape: &mut Tape<'_>,
    logits: Var,
    targets: &[usize],
    temperature: f64,
    config: &LossConfig,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    config.validate()?;
    let c = tape.value(logits).cols();
    let weights: Vec<f64> = match config.mode {
        LossMode::Wce => {
            let w = class_weights.ok_or_else(|| Error::Config("weighted loss needs class weights".into()))?;
            if w.len() != c {
                return Err(shape_err("classification_loss", format!("{} class weights for {c} classes", w.len())));
            }
            targets
                .iter()
                .map(|&t| w.get(t).copied().ok_or(Error::LabelOutOfRange { id: t, size: c }))
                .collect::<Result<_>>()?
        }
        _ => vec![1.0; targets.len()],
    };
    let gamma = if config.mode == LossMode::Focal { config.gamma } else { 0.0 };
    tape.class_loss(logits, targets, &weights, FocalSpec { gamma, tau: temperature })
}

/// Loss of a single `1 × C` logit row.
pub fn classification_loss(
    logits: &Tensor,
    target: usize,
    temperature: f64,
    config: &LossConfig,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    if logits.rows() != 1 {
        return Err(shape_err("classification_loss", "expected a single logit row"));
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = loss_term(&mut tape, l, &[target], temperature, config, class_weights)?;
    Ok(tape.value(out).data()[0])
}
