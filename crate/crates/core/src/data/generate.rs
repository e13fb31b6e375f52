//! Synthetic long-tail scene generator.
//!
//! Relation and object classes follow Zipf laws. Features are Gaussian draws
//! around per-class prototypes. A relation feature also carries a term from its
//! subject and object prototypes (resolvable from the triplet) and a per-scene
//! offset shared by every relation in the scene (resolvable from the scene).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_cutoffs, union_box, BBox, Dataset, DatasetManifest, SceneSample, SplitSizes, TripletBoxes, TripletSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_objects: usize,
    pub num_relations: usize,
    /// Zipf exponent of relation frequencies; 0 gives uniform classes.
    pub relation_zipf: f64,
    pub object_zipf: f64,
    pub scenes: usize,
    pub min_triplets: usize,
    pub max_triplets: usize,
    pub feature_dim: usize,
    /// Per-dimension noise around class prototypes.
    pub feature_sigma: f64,
    /// Scale of the subject/object prototype difference mixed into relation features.
    pub relation_mix: f64,
    /// Std of the per-scene offset added to relation features.
    pub scene_sigma: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub relation_cutoffs: (usize, usize),
    pub object_cutoffs: (usize, usize),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_objects: 40,
            num_relations: 30,
            relation_zipf: 1.0,
            object_zipf: 1.0,
            scenes: 250,
            min_triplets: 8,
            max_triplets: 8,
            feature_dim: 16,
            feature_sigma: 1.0,
            relation_mix: 0.5,
            scene_sigma: 1.0,
            train_fraction: 0.7,
            val_fraction: 0.1,
            relation_cutoffs: (5, 10),
            object_cutoffs: (5, 10),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_objects == 0 || self.num_relations == 0 {
            return bad("vocabularies must be non-empty");
        }
        if self.scenes == 0 || self.min_triplets == 0 || self.min_triplets > self.max_triplets {
            return bad("need at least one scene and 1 <= min_triplets <= max_triplets");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        for (name, v) in [
            ("relation_zipf", self.relation_zipf),
            ("object_zipf", self.object_zipf),
            ("feature_sigma", self.feature_sigma),
            ("relation_mix", self.relation_mix),
            ("scene_sigma", self.scene_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        let fr = (self.train_fraction, self.val_fraction);
        if !(fr.0 > 0.0 && fr.1 >= 0.0 && fr.0 + fr.1 <= 1.0) {
            return bad("split fractions must satisfy train > 0, val >= 0, train + val <= 1");
        }
        check_cutoffs(self.relation_cutoffs, self.num_relations)?;
        check_cutoffs(self.object_cutoffs, self.num_objects)?;
        Ok(())
    }
}

/// `p_k ∝ (k + 1)^(-s)` for `k = 0..classes`.
pub fn zipf_probabilities(classes: usize, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=classes).map(|k| (k as f64).powf(-exponent)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let (x, y) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
    let (w, h) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
    BBox { x1: x, y1: y, x2: x + w, y2: y + h }
}

fn noisy(center: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise = Tensor::randn(&[center.len()], sigma, rng);
    center.iter().zip(noise.data()).map(|(c, n)| c + n).collect()
}

/// Generates scenes and splits them into train/val/test in generation order.
/// Everything is a function of `config` (including its seed).
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.feature_dim;
    let object_protos = Tensor::randn(&[config.num_objects, d], 1.0, &mut rng);
    let relation_protos = Tensor::randn(&[config.num_relations, d], 1.0, &mut rng);
    let rel_dist = WeightedIndex::new(zipf_probabilities(config.num_relations, config.relation_zipf))
        .map_err(|e| Error::Config(e.to_string()))?;
    let obj_dist = WeightedIndex::new(zipf_probabilities(config.num_objects, config.object_zipf))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut scenes = Vec::with_capacity(config.scenes);
    for s in 0..config.scenes {
        let n = rng.random_range(config.min_triplets..=config.max_triplets);
        let offset = Tensor::randn(&[d], config.scene_sigma, &mut rng);
        let mut triplets = Vec::with_capacity(n);
        for _ in 0..n {
            let (cs, cr, co) = (obj_dist.sample(&mut rng), rel_dist.sample(&mut rng), obj_dist.sample(&mut rng));
            let (ps, po) = (object_protos.row(cs), object_protos.row(co));
            let rel_center: Vec<f64> = (0..d)
                .map(|k| relation_protos.get(cr, k) + config.relation_mix * (ps[k] - po[k]) + offset.data()[k])
                .collect();
            let subject = noisy(ps, config.feature_sigma, &mut rng);
            let object = noisy(po, config.feature_sigma, &mut rng);
            let relation = noisy(&rel_center, config.feature_sigma, &mut rng);
            let (bs, bo) = (random_box(&mut rng), random_box(&mut rng));
            triplets.push(TripletSample {
                subject_label: cs,
                relation_label: cr,
                object_label: co,
                subject,
                relation,
                object,
                boxes: Some(TripletBoxes {
                    subject: bs,
                    object: bo,
                    relation: union_box(&bs, &bo)?,
                }),
            });
        }
        scenes.push(SceneSample {
            id: format!("scene-{s:05}"),
            triplets,
        });
    }

    let n_train = ((config.scenes as f64 * config.train_fraction).round() as usize).clamp(1, config.scenes);
    let n_val = ((config.scenes as f64 * config.val_fraction).round() as usize).min(config.scenes - n_train);
    let test = scenes.split_off(n_train + n_val);
    let val = scenes.split_off(n_train);
    let train = scenes;

    let count = |s: &[SceneSample]| s.iter().map(SceneSample::len).sum::<usize>();
    let mut relation_counts = vec![0; config.num_relations];
    let mut object_counts = vec![0; config.num_objects];
    for t in train.iter().flat_map(|s| &s.triplets) {
        relation_counts[t.relation_label] += 1;
        object_counts[t.subject_label] += 1;
        object_counts[t.object_label] += 1;
    }
    let manifest = DatasetManifest {
        num_objects: config.num_objects,
        num_relations: config.num_relations,
        feature_dim: d,
        seed: config.seed,
        relation_counts,
        object_counts,
        relation_cutoffs: config.relation_cutoffs,
        object_cutoffs: config.object_cutoffs,
        splits: SplitSizes {
            train_scenes: train.len(),
            val_scenes: val.len(),
            test_scenes: test.len(),
            train_triplets: count(&train),
            val_triplets: count(&val),
            test_triplets: count(&test),
        },
        generator: config.clone(),
    };
    manifest.validate()?;
    Ok(Dataset {
        train,
        val,
        test,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_exponent_is_uniform() {
        let p = zipf_probabilities(7, 0.0);
        assert!(p.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = GeneratorConfig { scenes: 20, ..Default::default() };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = GeneratorConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap().train, generate_dataset(&other).unwrap().train);
    }

    #[test]
    fn manifest_counts_match_observed() {
        let cfg = GeneratorConfig { scenes: 40, min_triplets: 2, max_triplets: 9, ..Default::default() };
        let ds = generate_dataset(&cfg).unwrap();
        let mut counts = vec![0; cfg.num_relations];
        for t in ds.train.iter().flat_map(|s| &s.triplets) {
            counts[t.relation_label] += 1;
        }
        assert_eq!(counts, ds.manifest.relation_counts);
        assert_eq!(ds.train.len() + ds.val.len() + ds.test.len(), 40);
        assert_eq!(ds.manifest.splits.train_scenes, 28);
        for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            s.validate(cfg.num_objects, cfg.num_relations).unwrap();
            for t in &s.triplets {
                let b = t.boxes.unwrap();
                assert_eq!(b.relation, union_box(&b.subject, &b.object).unwrap());
            }
        }
    }

    #[test]
    fn chi_square_against_zipf() {
        // 10k triplets, 30 relation classes, s = 1.
        let cfg = GeneratorConfig {
            num_relations: 30,
            relation_zipf: 1.0,
            scenes: 1250,
            min_triplets: 8,
            max_triplets: 8,
            feature_dim: 2,
            train_fraction: 1.0,
            val_fraction: 0.0,
            seed: 42,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let n = ds.manifest.splits.train_triplets as f64;
        assert_eq!(n, 10_000.0);
        let p = zipf_probabilities(30, 1.0);
        let stat: f64 = ds
            .manifest
            .relation_counts
            .iter()
            .zip(&p)
            .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
            .sum();
        // upper 0.1% point of chi-square with 29 degrees of freedom
        assert!(stat < 58.30117, "chi-square {stat}");
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            GeneratorConfig { scenes: 0, ..Default::default() },
            GeneratorConfig { min_triplets: 5, max_triplets: 4, ..Default::default() },
            GeneratorConfig { relation_zipf: -1.0, ..Default::default() },
            GeneratorConfig { relation_cutoffs: (20, 20), ..Default::default() },
            GeneratorConfig { train_fraction: 0.9, val_fraction: 0.2, ..Default::default() },
        ] {
            assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
