//! Scene-graph samples, the synthetic long-tail generator, frequency buckets
//! and the on-disk dataset format.

mod buckets;
mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use buckets::{bucket_classes, Bucket, BucketAssignment};
pub use generate::{generate_dataset, zipf_probabilities, GeneratorConfig};
pub use io::{read_dataset, read_manifest, read_scenes, write_dataset, write_scenes, MANIFEST_FILE, SPLIT_FILES};

/// Axis-aligned box `(x1, y1)`–`(x2, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::InvalidBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        Ok(())
    }
}

/// Smallest box enclosing both inputs; the relation region of a subject/object pair.
pub fn union_box(subject: &BBox, object: &BBox) -> Result<BBox> {
    subject.validate()?;
    object.validate()?;
    Ok(BBox {
        x1: subject.x1.min(object.x1),
        y1: subject.y1.min(object.y1),
        x2: subject.x2.max(object.x2),
        y2: subject.y2.max(object.y2),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletBoxes {
    pub subject: BBox,
    pub object: BBox,
    pub relation: BBox,
}

/// One ⟨subject, relation, object⟩ instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletSample {
    pub subject_label: usize,
    pub relation_label: usize,
    pub object_label: usize,
    pub subject: Vec<f64>,
    pub relation: Vec<f64>,
    pub object: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<TripletBoxes>,
}

impl TripletSample {
    pub fn feature_dim(&self) -> usize {
        self.subject.len()
    }
}

/// All annotated triplets of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub id: String,
    pub triplets: Vec<TripletSample>,
}

impl SceneSample {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Checks non-emptiness, a shared feature width and label ranges.
    pub fn validate(&self, num_objects: usize, num_relations: usize) -> Result<()> {
        let first = self.triplets.first().ok_or_else(|| Error::EmptyScene(self.id.clone()))?;
        let d = first.feature_dim();
        for t in &self.triplets {
            if [t.subject.len(), t.relation.len(), t.object.len()].iter().any(|&l| l != d || l == 0) {
                return Err(Error::Shape {
                    op: "scene",
                    detail: format!("scene {} mixes feature widths", self.id),
                });
            }
            for (id, size) in [
                (t.subject_label, num_objects),
                (t.object_label, num_objects),
                (t.relation_label, num_relations),
            ] {
                if id >= size {
                    return Err(Error::LabelOutOfRange { id, size });
                }
            }
            if let Some(b) = &t.boxes {
                b.subject.validate()?;
                b.object.validate()?;
                b.relation.validate()?;
            }
        }
        Ok(())
    }
}

/// Per-split sizes recorded in the manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub train_triplets: usize,
    pub val_triplets: usize,
    pub test_triplets: usize,
}

/// Vocabulary sizes, training frequencies and bucket cutoffs of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_objects: usize,
    pub num_relations: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Training-split occurrences per relation class.
    pub relation_counts: Vec<usize>,
    /// Training-split occurrences per object class, subject and object slots combined.
    pub object_counts: Vec<usize>,
    /// Sizes of the many and medium buckets; the rest are few.
    pub relation_cutoffs: (usize, usize),
    pub object_cutoffs: (usize, usize),
    pub splits: SplitSizes,
    pub generator: GeneratorConfig,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.relation_counts.len() != self.num_relations || self.object_counts.len() != self.num_objects {
            return Err(Error::Config("manifest count vectors disagree with vocabulary sizes".into()));
        }
        if self.relation_counts.iter().sum::<usize>() != self.splits.train_triplets {
            return Err(Error::Config("relation counts do not sum to the training triplet count".into()));
        }
        if self.object_counts.iter().sum::<usize>() != 2 * self.splits.train_triplets {
            return Err(Error::Config("object counts do not sum to twice the training triplet count".into()));
        }
        check_cutoffs(self.relation_cutoffs, self.num_relations)?;
        check_cutoffs(self.object_cutoffs, self.num_objects)?;
        Ok(())
    }

    pub fn relation_buckets(&self) -> Result<BucketAssignment> {
        bucket_classes(&self.relation_counts, self.relation_cutoffs)
    }

    pub fn object_buckets(&self) -> Result<BucketAssignment> {
        bucket_classes(&self.object_counts, self.object_cutoffs)
    }
}

/// Bucket boundaries `k_many < k_many + k_medium <= classes` must be strictly increasing.
pub(crate) fn check_cutoffs((many, medium): (usize, usize), classes: usize) -> Result<()> {
    if many == 0 || medium == 0 || many + medium > classes {
        return Err(Error::Config(format!(
            "bucket cutoffs ({many}, {medium}) invalid for {classes} classes"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[SceneSample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn union_examples() {
        assert_eq!(union_box(&b(0., 0., 2., 2.), &b(1., 1., 3., 3.)).unwrap(), b(0., 0., 3., 3.));
        let x = b(0.2, 0.1, 0.5, 0.9);
        assert_eq!(union_box(&x, &x).unwrap(), x);
        assert_eq!(union_box(&b(0., 0., 1., 1.), &b(5., 5., 6., 6.)).unwrap(), b(0., 0., 6., 6.));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(matches!(BBox::new(1.0, 0.0, 0.0, 1.0), Err(Error::InvalidBox { .. })));
        let bad = BBox { x1: 0.0, y1: 2.0, x2: 1.0, y2: 1.0 };
        assert!(union_box(&bad, &b(0., 0., 1., 1.)).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-10.0f64..10.0, -10.0f64..10.0, 0.0f64..5.0, 0.0f64..5.0)
            .prop_map(|(x, y, w, h)| BBox { x1: x, y1: y, x2: x + w, y2: y + h })
    }

    proptest! {
        #[test]
        fn union_is_commutative_associative_idempotent(a in arb_box(), b in arb_box(), c in arb_box()) {
            prop_assert_eq!(union_box(&a, &b).unwrap(), union_box(&b, &a).unwrap());
            let left = union_box(&union_box(&a, &b).unwrap(), &c).unwrap();
            let right = union_box(&a, &union_box(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            prop_assert_eq!(union_box(&a, &a).unwrap(), a);
        }
    }

    #[test]
    fn scene_validation() {
        let empty = SceneSample { id: "e".into(), triplets: vec![] };
        assert!(matches!(empty.validate(2, 2), Err(Error::EmptyScene(_))));
        let t = TripletSample {
            subject_label: 0,
            relation_label: 5,
            object_label: 1,
            subject: vec![0.0],
            relation: vec![0.0],
            object: vec![0.0],
            boxes: None,
        };
        let s = SceneSample { id: "s".into(), triplets: vec![t] };
        assert!(matches!(s.validate(2, 3), Err(Error::LabelOutOfRange { id: 5, size: 3 })));
    }
}
