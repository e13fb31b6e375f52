//! The assembled model: global-context encoder, relational encoder and the
//! cosine classifier, plus checkpoint persistence.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SceneSample;
use crate::error::{shape_err, Error, Result};
use crate::global_encoder::{encode_scene, pack_triplets, GlobalEncoderParams};
use crate::head::{
    cosine_scores, loss_term, project_labels, wce_class_weights, ClassifierParams, LabelEmbeddingTable, LossConfig,
    LossMode, DEFAULT_EMBEDDING_DIM, DEFAULT_TEMPERATURE,
};
use crate::numerics::{ParamId, ParamInit, ParamSet, Tape, Tensor, Var};
use crate::relational::{encode_relations, RelationalEncoderParams, RelationalShape, TOKENS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub global_layers: usize,
    pub relational_layers: usize,
    pub memory_slots: usize,
    pub embedding_dim: usize,
    pub label_seed: u64,
    /// Classifier softmax temperature.
    pub temperature: f64,
    /// Dropout on attention outputs and FFN hidden units during training.
    pub dropout: f64,
    pub num_objects: usize,
    pub num_relations: usize,
    pub disable_global: bool,
    pub disable_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            hidden: 32,
            heads: 4,
            global_layers: 2,
            relational_layers: 2,
            memory_slots: 8,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            label_seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            dropout: 0.3,
            num_objects: 40,
            num_relations: 30,
            disable_global: false,
            disable_memory: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("global_layers", self.global_layers),
            ("relational_layers", self.relational_layers),
            ("memory_slots", self.memory_slots),
            ("embedding_dim", self.embedding_dim),
            ("num_objects", self.num_objects),
            ("num_relations", self.num_relations),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible into {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Per-class loss weights for both vocabularies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassWeights {
    pub objects: Vec<f64>,
    pub relations: Vec<f64>,
}

impl ClassWeights {
    pub fn from_counts(object_counts: &[usize], relation_counts: &[usize]) -> Self {
        Self {
            objects: wce_class_weights(object_counts),
            relations: wce_class_weights(relation_counts),
        }
    }
}

/// Hidden states of the three token rows for every triplet of a scene.
pub struct SceneForward {
    pub subject: Var,
    pub relation: Var,
    pub object: Var,
    /// `3N × h` gate complements, one per relational layer.
    pub memory_scores: Vec<Var>,
}

pub struct ProjectedLabels {
    pub objects: Var,
    pub relations: Var,
}

pub struct SceneLogits {
    pub subject: Var,
    pub relation: Var,
    pub object: Var,
}

/// Eager outputs of one scene.
#[derive(Clone, Debug)]
pub struct ScenePrediction {
    /// `N × C_obj` cosine logits.
    pub subject_logits: Tensor,
    /// `N × C_rel` cosine logits.
    pub relation_logits: Tensor,
    pub object_logits: Tensor,
    pub memory_scores: Vec<Tensor>,
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                // strict comparison keeps the lowest index on ties
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl ScenePrediction {
    pub fn subjects(&self) -> Vec<usize> {
        argmax_rows(&self.subject_logits)
    }

    pub fn relations(&self) -> Vec<usize> {
        argmax_rows(&self.relation_logits)
    }

    pub fn objects(&self) -> Vec<usize> {
        argmax_rows(&self.object_logits)
    }

    /// `softmax(logits / temperature)` per triplet over relation classes.
    pub fn relation_probabilities(&self, temperature: f64) -> Result<Tensor> {
        crate::numerics::softmax_rows(&self.relation_logits.scale(1.0 / temperature))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub global: Option<GlobalEncoderParams>,
    pub relational: RelationalEncoderParams,
    pub classifier: ClassifierParams,
    pub labels: LabelEmbeddingTable,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = ParamInit::new(&mut params, &mut rng);
        let global = if config.disable_global {
            None
        } else {
            Some(GlobalEncoderParams::init(
                &mut init,
                config.feature_dim,
                config.hidden,
                config.heads,
                config.global_layers,
            )?)
        };
        let relational = RelationalEncoderParams::init(
            &mut init,
            RelationalShape {
                feature_dim: config.feature_dim,
                hidden: config.hidden,
                heads: config.heads,
                layers: config.relational_layers,
                memory_slots: config.memory_slots,
                global_layers: if config.disable_global { 0 } else { config.global_layers },
                use_memory: !config.disable_memory,
            },
        )?;
        let classifier = ClassifierParams::init(&mut init, config.embedding_dim, config.hidden);
        let labels = LabelEmbeddingTable::build(
            config.num_objects,
            config.num_relations,
            config.embedding_dim,
            config.label_seed,
        )?;
        Ok(Self {
            config,
            params,
            global,
            relational,
            classifier,
            labels,
        })
    }

    /// Rebuilds the structure for `config` and loads `params` into it by name.
    pub fn from_params(config: ModelConfig, params: &ParamSet) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    /// Ids of the encoder parameters (everything except the classifier MLP).
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let classifier = self.classifier_param_ids();
        self.params.ids().filter(|id| !classifier.contains(id)).collect()
    }

    pub fn classifier_param_ids(&self) -> Vec<ParamId> {
        let c = &self.classifier;
        [Some(c.inner.weight), c.inner.bias, Some(c.outer.weight), c.outer.bias]
            .into_iter()
            .flatten()
            .collect()
    }

    fn tokens(&self, scene: &SceneSample) -> Result<Tensor> {
        if scene.is_empty() {
            return Err(Error::EmptyScene(scene.id.clone()));
        }
        let d = self.config.feature_dim;
        let mut data = Vec::with_capacity(scene.len() * TOKENS * d);
        for t in &scene.triplets {
            for part in [&t.subject, &t.relation, &t.object] {
                if part.len() != d {
                    return Err(shape_err("model", format!("feature length {} in scene {}, expected {d}", part.len(), scene.id)));
                }
                data.extend_from_slice(part);
            }
        }
        Tensor::matrix(scene.len() * TOKENS, d, data)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, scene: &SceneSample) -> Result<SceneForward> {
        let tokens = self.tokens(scene)?;
        let stack = match &self.global {
            Some(g) => Some(encode_scene(tape, &pack_triplets(scene)?, g)?),
            None => None,
        };
        let out = encode_relations(tape, &tokens, &self.relational, stack.as_ref())?;
        let n = scene.len();
        let rows = |k: usize| (0..n).map(|i| TOKENS * i + k).collect::<Vec<_>>();
        Ok(SceneForward {
            subject: tape.gather_rows(out.output, &rows(0))?,
            relation: tape.gather_rows(out.output, &rows(1))?,
            object: tape.gather_rows(out.output, &rows(2))?,
            memory_scores: out.memory_scores,
        })
    }

    pub fn project_labels(&self, tape: &mut Tape<'_>) -> Result<ProjectedLabels> {
        Ok(ProjectedLabels {
            objects: project_labels(tape, &self.labels.objects, &self.classifier)?,
            relations: project_labels(tape, &self.labels.relations, &self.classifier)?,
        })
    }

    /// Cosine logits of already extracted `x_s`, `x_r`, `x_o` rows.
    pub fn logits(&self, tape: &mut Tape<'_>, subject: Var, relation: Var, object: Var, labels: &ProjectedLabels) -> Result<SceneLogits> {
        Ok(SceneLogits {
            subject: cosine_scores(tape, subject, labels.objects)?,
            relation: cosine_scores(tape, relation, labels.relations)?,
            object: cosine_scores(tape, object, labels.objects)?,
        })
    }

    /// Summed subject, relation and object losses, each averaged over the rows.
    #[allow(clippy::too_many_arguments)]
    pub fn triplet_loss(
        &self,
        tape: &mut Tape<'_>,
        logits: &SceneLogits,
        subjects: &[usize],
        relations: &[usize],
        objects: &[usize],
        loss: &LossConfig,
        weights: &ClassWeights,
    ) -> Result<Var> {
        let (ow, rw) = match loss.mode {
            LossMode::Wce => (Some(weights.objects.as_slice()), Some(weights.relations.as_slice())),
            _ => (None, None),
        };
        let tau = self.config.temperature;
        let s = loss_term(tape, logits.subject, subjects, tau, loss, ow)?;
        let r = loss_term(tape, logits.relation, relations, tau, loss, rw)?;
        let o = loss_term(tape, logits.object, objects, tau, loss, ow)?;
        tape.add_n(&[s, r, o])
    }

    /// Mean over the scene's triplets of `L_s + L_r + L_o`.
    pub fn scene_loss(&self, tape: &mut Tape<'_>, scene: &SceneSample, loss: &LossConfig, weights: &ClassWeights) -> Result<Var> {
        let fwd = self.forward(tape, scene)?;
        let labels = self.project_labels(tape)?;
        let logits = self.logits(tape, fwd.subject, fwd.relation, fwd.object, &labels)?;
        let (s, r, o) = scene_targets(scene);
        self.triplet_loss(tape, &logits, &s, &r, &o, loss, weights)
    }

    pub fn predict(&self, scene: &SceneSample) -> Result<ScenePrediction> {
        let mut tape = Tape::with_params(&self.params);
        let fwd = self.forward(&mut tape, scene)?;
        let labels = self.project_labels(&mut tape)?;
        let logits = self.logits(&mut tape, fwd.subject, fwd.relation, fwd.object, &labels)?;
        Ok(ScenePrediction {
            subject_logits: tape.value(logits.subject).clone(),
            relation_logits: tape.value(logits.relation).clone(),
            object_logits: tape.value(logits.object).clone(),
            memory_scores: fwd.memory_scores.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// `x_s`, `x_r`, `x_o` hidden rows of a scene, without the classifier.
    pub fn features(&self, scene: &SceneSample) -> Result<(Tensor, Tensor, Tensor)> {
        let mut tape = Tape::with_params(&self.params);
        let f = self.forward(&mut tape, scene)?;
        Ok((tape.value(f.subject).clone(), tape.value(f.relation).clone(), tape.value(f.object).clone()))
    }
}

/// Ground-truth subject, relation and object labels of a scene.
pub fn scene_targets(scene: &SceneSample) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let s = scene.triplets.iter().map(|t| t.subject_label).collect();
    let r = scene.triplets.iter().map(|t| t.relation_label).collect();
    let o = scene.triplets.iter().map(|t| t.object_label).collect();
    (s, r, o)
}

/// Sizes of the randomly initialized model and scene used by [`model_grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub hidden: usize,
    pub heads: usize,
    /// Layers in each encoder.
    pub layers: usize,
    pub memory_slots: usize,
    pub triplets: usize,
    /// Size of both vocabularies.
    pub classes: usize,
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            hidden: 16,
            heads: 2,
            layers: 1,
            memory_slots: 4,
            triplets: 3,
            classes: 5,
            feature_dim: 6,
            embedding_dim: 8,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

/// Central-difference check of every parameter of a full model on one
/// generated scene, using the summed subject, relation and object loss.
pub fn model_grad_check(setup: &GradCheckSetup, eps: f64, tol: f64) -> Result<crate::numerics::GradCheckReport> {
    if setup.classes < 2 {
        return Err(Error::Config("grad check needs at least two classes".into()));
    }
    let config = ModelConfig {
        feature_dim: setup.feature_dim,
        hidden: setup.hidden,
        heads: setup.heads,
        global_layers: setup.layers,
        relational_layers: setup.layers,
        memory_slots: setup.memory_slots,
        embedding_dim: setup.embedding_dim,
        label_seed: setup.seed,
        num_objects: setup.classes,
        num_relations: setup.classes,
        ..ModelConfig::default()
    };
    let model = Model::new(config, setup.seed)?;
    let data = crate::data::generate_dataset(&crate::data::GeneratorConfig {
        num_objects: setup.classes,
        num_relations: setup.classes,
        feature_dim: setup.feature_dim,
        scenes: 1,
        min_triplets: setup.triplets,
        max_triplets: setup.triplets,
        train_fraction: 1.0,
        val_fraction: 0.0,
        relation_cutoffs: (1, 1),
        object_cutoffs: (1, 1),
        seed: setup.seed,
        ..crate::data::GeneratorConfig::default()
    })?;
    let scene = &data.train[0];
    let m = &data.manifest;
    let weights = ClassWeights::from_counts(&m.object_counts, &m.relation_counts);
    crate::numerics::grad_check(&model.params, |tape| model.scene_loss(tape, scene, &setup.loss, &weights), eps, tol)
}

pub const CHECKPOINT_FORMAT: &str = "triplet-transformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// All parameter tensors with their names and shapes, plus the model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `"init"`, `"joint"` or `"decoupled"`.
    pub stage: String,
    pub model: ModelConfig,
    pub train: Option<crate::train::TrainConfig>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(model: &Model, stage: &str, train: Option<crate::train::TrainConfig>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            stage: stage.to_string(),
            model: model.config.clone(),
            train,
            params: model.params.clone(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        Model::from_params(self.model.clone(), &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("{} is not a checkpoint (format {:?})", path.display(), ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
