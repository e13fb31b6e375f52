//! Joint training and decoupled classifier retraining.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetManifest, SceneSample};
use crate::error::{Error, Result};
use crate::head::LossConfig;
use crate::model::{ClassWeights, Model, ModelConfig};
use crate::numerics::{ParamId, ParamSet, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}; expected adam or sgd"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First-order optimizer over a [`ParamSet`]. Only parameters that receive a
/// gradient are touched.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: Vec<u64>,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: vec![0; params.len()],
            first: vec![None; params.len()],
            second: vec![None; params.len()],
        })
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Tensor)]) {
        let c = self.config;
        for (id, g) in grads {
            let i = id.index();
            let p = params.get_mut(*id);
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= c.learning_rate * d;
                    }
                }
                OptimizerKind::Adam => {
                    self.steps[i] += 1;
                    let t = self.steps[i] as i32;
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
                    let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
                    for (((w, &d), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                        *mk = c.beta1 * *mk + (1.0 - c.beta1) * d;
                        *vk = c.beta2 * *vk + (1.0 - c.beta2) * d * d;
                        *w -= c.learning_rate * (*mk / bc1) / ((*vk / bc2).sqrt() + c.epsilon);
                    }
                }
            }
        }
    }
}

/// Second-stage settings: classifier-only updates under class-balanced sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Scenes per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub retrain: RetrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 8,
            epochs: 30,
            seed: 0,
            retrain: RetrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.retrain.optimizer.validate()?;
        if self.batch_size == 0 || self.retrain.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }

    /// Copies vocabulary sizes and feature width from a dataset.
    pub fn fit_dataset(&mut self, manifest: &DatasetManifest) {
        self.model.num_objects = manifest.num_objects;
        self.model.num_relations = manifest.num_relations;
        self.model.feature_dim = manifest.feature_dim;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }
}

pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Batch loss and gradients: each scene's mean triplet loss weighted by its
/// share of the batch's triplets, so the result is a per-triplet mean.
///
/// With `dropout_seed` set, scene `i` draws its dropout masks from a seed
/// derived from it and `i`.
pub fn batch_gradients(
    model: &Model,
    scenes: &[&SceneSample],
    loss: &LossConfig,
    weights: &ClassWeights,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let total: usize = scenes.iter().map(|s| s.len()).sum();
    let per_scene: Vec<Result<(f64, Vec<Option<Tensor>>)>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut tape = Tape::with_params(&model.params);
            if let Some(seed) = dropout_seed {
                tape.enable_dropout(model.config.dropout, mix_seed(seed, i as u64));
            }
            let l = model.scene_loss(&mut tape, scene, loss, weights)?;
            let g = tape.backward(l)?;
            let value = tape.value(l).data()[0];
            let grads = model.params.ids().map(|id| g.param(id).cloned()).collect();
            Ok((value, grads))
        })
        .collect();
    let mut value = 0.0;
    let mut acc: Vec<Option<Tensor>> = vec![None; model.params.len()];
    for (scene, r) in scenes.iter().zip(per_scene) {
        let (l, grads) = r?;
        let share = scene.len() as f64 / total as f64;
        value += share * l;
        for (slot, g) in acc.iter_mut().zip(grads) {
            if let Some(g) = g {
                let g = g.scale(share);
                match slot {
                    Some(a) => a.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
        }
    }
    let grads = model.params.ids().zip(acc).filter_map(|(id, g)| g.map(|g| (id, g))).collect();
    Ok((value, grads))
}

fn check_finite(value: f64, step: usize, trace: &[TraceRecord]) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    Err(Error::Divergence {
        step,
        loss: value,
        trace: trace.iter().map(|r| r.loss).collect(),
    })
}

fn divergence_or(e: Error, step: usize, trace: &[TraceRecord]) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence {
            step,
            loss: f64::NAN,
            trace: trace.iter().map(|r| r.loss).collect(),
        },
        other => other,
    }
}

/// Minibatch training of every parameter on the summed subject, relation and
/// object losses of the training split.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with_observer(config, dataset, |_, _| Ok(()))
}

/// [`train`], calling `observer(epoch, model)` after every epoch.
pub fn train_with_observer(
    config: &TrainConfig,
    dataset: &Dataset,
    mut observer: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut config = config.clone();
    config.fit_dataset(&dataset.manifest);
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let weights = ClassWeights::from_counts(&dataset.manifest.object_counts, &dataset.manifest.relation_counts);
    let mut optimizer = Optimizer::new(config.optimizer, &model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f5c_e9e5);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut trace = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let scenes: Vec<&SceneSample> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let (loss, grads) =
                batch_gradients(&model, &scenes, &config.loss, &weights, Some(mix_seed(config.seed, step as u64)))
                    .map_err(|e| divergence_or(e, step, &trace))?;
            check_finite(loss, step, &trace)?;
            if grads.iter().any(|(_, g)| !g.is_finite()) {
                return Err(divergence_or(Error::NonFinite("gradient"), step, &trace));
            }
            optimizer.step(&mut model.params, &grads);
            trace.push(TraceRecord { epoch, step, loss });
            step += 1;
        }
        observer(epoch, &model)?;
    }
    Ok(TrainOutcome { model, trace })
}

/// Samples a relation class uniformly among those present, then an item of that class.
#[derive(Clone, Debug)]
pub struct ClassBalancedSampler {
    classes: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClassBalancedSampler {
    pub fn new(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("class-balanced sampler needs at least one item".into()));
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let mut members = vec![Vec::new(); max + 1];
        for (i, &c) in labels.iter().enumerate() {
            members[c].push(i);
        }
        let classes = (0..=max).filter(|&c| !members[c].is_empty()).collect::<Vec<_>>();
        let members = classes.iter().map(|&c| std::mem::take(&mut members[c])).collect();
        Ok(Self { classes, members })
    }

    /// Present classes in increasing order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let k = rng.random_range(0..self.classes.len());
        let items = &self.members[k];
        items[rng.random_range(0..items.len())]
    }
}

struct FrozenFeatures {
    subject: Vec<Vec<f64>>,
    relation: Vec<Vec<f64>>,
    object: Vec<Vec<f64>>,
    labels: Vec<(usize, usize, usize)>,
}

fn frozen_features(model: &Model, scenes: &[SceneSample]) -> Result<FrozenFeatures> {
    let per_scene = scenes.par_iter().map(|s| model.features(s)).collect::<Result<Vec<_>>>()?;
    let mut out = FrozenFeatures {
        subject: Vec::new(),
        relation: Vec::new(),
        object: Vec::new(),
        labels: Vec::new(),
    };
    for (scene, (s, r, o)) in scenes.iter().zip(per_scene) {
        for (i, t) in scene.triplets.iter().enumerate() {
            out.subject.push(s.row(i).to_vec());
            out.relation.push(r.row(i).to_vec());
            out.object.push(o.row(i).to_vec());
            out.labels.push((t.subject_label, t.relation_label, t.object_label));
        }
    }
    Ok(out)
}

/// Second stage: encoders and memory fixed, the classifier MLP retrained on
/// class-balanced minibatches of the training triplets.
pub fn decoupled_classifier_retrain(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.loss.validate()?;
    config.retrain.optimizer.validate()?;
    if config.retrain.batch_size == 0 {
        return Err(Error::Config("retrain batch_size must be positive".into()));
    }
    let mut model = model.clone();
    let mut trace = Vec::new();
    if config.retrain.steps == 0 {
        return Ok(TrainOutcome { model, trace });
    }
    let feats = frozen_features(&model, &dataset.train)?;
    let relations: Vec<usize> = feats.labels.iter().map(|l| l.1).collect();
    let sampler = ClassBalancedSampler::new(&relations)?;
    let weights = ClassWeights::from_counts(&dataset.manifest.object_counts, &dataset.manifest.relation_counts);
    let classifier = model.classifier_param_ids();
    let mut optimizer = Optimizer::new(config.retrain.optimizer, &model.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xdec0_0b1ed);
    let h = model.config.hidden;
    for step in 0..config.retrain.steps {
        let batch: Vec<usize> = (0..config.retrain.batch_size).map(|_| sampler.sample(&mut rng)).collect();
        let gather = |rows: &[Vec<f64>]| -> Result<Tensor> {
            Tensor::matrix(batch.len(), h, batch.iter().flat_map(|&i| rows[i].iter().copied()).collect())
        };
        let (xs, xr, xo) = (gather(&feats.subject)?, gather(&feats.relation)?, gather(&feats.object)?);
        let (s, r, o): (Vec<usize>, Vec<usize>, Vec<usize>) = {
            let mut s = Vec::new();
            let mut r = Vec::new();
            let mut o = Vec::new();
            for &i in &batch {
                let l = feats.labels[i];
                s.push(l.0);
                r.push(l.1);
                o.push(l.2);
            }
            (s, r, o)
        };
        let (loss, grads) = {
            let mut tape = Tape::with_params(&model.params);
            let (xs, xr, xo) = (tape.constant(xs), tape.constant(xr), tape.constant(xo));
            let labels = model.project_labels(&mut tape)?;
            let logits = model.logits(&mut tape, xs, xr, xo, &labels)?;
            let l = model
                .triplet_loss(&mut tape, &logits, &s, &r, &o, &config.loss, &weights)
                .map_err(|e| divergence_or(e, step, &trace))?;
            let g = tape.backward(l)?;
            let grads: Vec<(ParamId, Tensor)> =
                classifier.iter().filter_map(|&id| g.param(id).cloned().map(|t| (id, t))).collect();
            (tape.value(l).data()[0], grads)
        };
        check_finite(loss, step, &trace)?;
        optimizer.step(&mut model.params, &grads);
        trace.push(TraceRecord { epoch: 0, step, loss });
    }
    Ok(TrainOutcome { model, trace })
}
