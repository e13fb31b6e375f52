//! Evaluation metrics and the report written by `eval`.
//!
//! Accuracies are grouped into many/medium/few buckets by training frequency.
//! A bucket, or the overall mean, is `None` when none of its classes occur in
//! the evaluated split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bucket, BucketAssignment, Dataset, SceneSample};
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;

pub const DEFAULT_RECALL_KS: [usize; 3] = [20, 50, 100];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketScores {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    pub all: Option<f64>,
}

impl BucketScores {
    pub fn get(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Many => self.many,
            Bucket::Medium => self.medium,
            Bucket::Few => self.few,
        }
    }

    /// Unweighted means of `(bucket, score)` pairs.
    fn from_groups(items: impl IntoIterator<Item = (Bucket, f64)>) -> Self {
        let mut sums = [(0.0, 0usize); 3];
        let mut total = (0.0, 0usize);
        for (b, v) in items {
            let slot = &mut sums[b as usize];
            slot.0 += v;
            slot.1 += 1;
            total.0 += v;
            total.1 += 1;
        }
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        Self {
            many: mean(sums[0]),
            medium: mean(sums[1]),
            few: mean(sums[2]),
            all: mean(total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassReport {
    pub buckets: BucketScores,
    /// Accuracy per class; `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

fn check_aligned(preds: usize, gts: usize) -> Result<()> {
    if preds != gts {
        return Err(shape_err("metrics", format!("{preds} predictions for {gts} labels")));
    }
    if gts == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(())
}

/// Mean over present classes of `correct_c / count_c`, per bucket and overall.
pub fn evaluate_per_class(preds: &[usize], gts: &[usize], buckets: &BucketAssignment) -> Result<PerClassReport> {
    check_aligned(preds.len(), gts.len())?;
    let c = buckets.num_classes();
    let mut counts = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for (&p, &g) in preds.iter().zip(gts) {
        if g >= c {
            return Err(Error::LabelOutOfRange { id: g, size: c });
        }
        counts[g] += 1;
        correct[g] += usize::from(p == g);
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| (counts[k] > 0).then(|| correct[k] as f64 / counts[k] as f64))
        .collect();
    let buckets = BucketScores::from_groups(per_class.iter().enumerate().filter_map(|(k, a)| a.map(|a| (buckets.of(k), a))));
    Ok(PerClassReport { buckets, per_class, counts })
}

pub fn evaluate_per_example(preds: &[usize], gts: &[usize]) -> Result<f64> {
    check_aligned(preds.len(), gts.len())?;
    let correct = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gts.len() as f64)
}

/// Subject, relation and object labels of one triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripleLabels {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairKind {
    So,
    Sr,
    Or,
}

impl PairKind {
    pub const ALL: [PairKind; 3] = [PairKind::So, PairKind::Sr, PairKind::Or];

    pub fn key(self, t: &TripleLabels) -> (usize, usize) {
        match self {
            PairKind::So => (t.subject, t.object),
            PairKind::Sr => (t.subject, t.relation),
            PairKind::Or => (t.object, t.relation),
        }
    }

    fn roles(self) -> (Role, Role) {
        match self {
            PairKind::So => (Role::Subject, Role::Object),
            PairKind::Sr => (Role::Subject, Role::Relation),
            PairKind::Or => (Role::Object, Role::Relation),
        }
    }
}

#[derive(Clone, Copy)]
enum Role {
    Subject,
    Relation,
    Object,
}

impl Role {
    fn of(self, t: &TripleLabels) -> usize {
        match self {
            Role::Subject => t.subject,
            Role::Relation => t.relation,
            Role::Object => t.object,
        }
    }
}

/// Training statistics used to bucket label pairs.
#[derive(Clone, Debug)]
pub struct PairStatistics {
    pairs: [BTreeMap<(usize, usize), usize>; 3],
    singles: [BTreeMap<usize, usize>; 3],
    total: usize,
    /// Minimum frequency of the many and medium buckets.
    pub thresholds: (f64, f64),
}

impl PairStatistics {
    /// Pair counts come from `train`. A pair is many-shot when it is at least as
    /// frequent as the least frequent many-shot relation, medium-shot likewise.
    pub fn new(train: &[TripleLabels], relation_buckets: &BucketAssignment, relation_counts: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let mut pairs: [BTreeMap<(usize, usize), usize>; 3] = Default::default();
        let mut singles: [BTreeMap<usize, usize>; 3] = Default::default();
        for t in train {
            for (k, kind) in PairKind::ALL.iter().enumerate() {
                *pairs[k].entry(kind.key(t)).or_default() += 1;
            }
            for (k, role) in [Role::Subject, Role::Relation, Role::Object].iter().enumerate() {
                *singles[k].entry(role.of(t)).or_default() += 1;
            }
        }
        let order = &relation_buckets.frequency_order;
        let last_of = |b: Bucket| order.iter().rev().find(|&&c| relation_buckets.of(c) == b).copied();
        let freq = |c: Option<usize>| c.map_or(f64::INFINITY, |c| relation_counts.get(c).copied().unwrap_or(0) as f64);
        let thresholds = (freq(last_of(Bucket::Many)), freq(last_of(Bucket::Medium)));
        Ok(Self {
            pairs,
            singles,
            total: train.len(),
            thresholds,
        })
    }

    /// Training count of the pair, or `f_a · f_b / N` if it never occurred.
    pub fn frequency(&self, kind: PairKind, key: (usize, usize)) -> f64 {
        let k = kind as usize;
        if let Some(&n) = self.pairs[k].get(&key) {
            return n as f64;
        }
        let (ra, rb) = kind.roles();
        let single = |role: Role, id: usize| self.singles[role as usize].get(&id).copied().unwrap_or(0) as f64;
        single(ra, key.0) * single(rb, key.1) / self.total as f64
    }

    pub fn bucket(&self, kind: PairKind, key: (usize, usize)) -> Bucket {
        let f = self.frequency(kind, key);
        if f >= self.thresholds.0 {
            Bucket::Many
        } else if f >= self.thresholds.1 {
            Bucket::Medium
        } else {
            Bucket::Few
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionalReport {
    pub so: BucketScores,
    pub sr: BucketScores,
    pub or: BucketScores,
}

impl CompositionalReport {
    pub fn get(&self, kind: PairKind) -> &BucketScores {
        match kind {
            PairKind::So => &self.so,
            PairKind::Sr => &self.sr,
            PairKind::Or => &self.or,
        }
    }
}

/// A pair is correct iff both its elements are. Accuracies are averaged per
/// ground-truth pair class, then per bucket.
pub fn evaluate_compositional(preds: &[TripleLabels], gts: &[TripleLabels], stats: &PairStatistics) -> Result<CompositionalReport> {
    check_aligned(preds.len(), gts.len())?;
    let score = |kind: PairKind| {
        let mut groups: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        for (p, g) in preds.iter().zip(gts) {
            let key = kind.key(g);
            let e = groups.entry(key).or_default();
            e.0 += usize::from(kind.key(p) == key);
            e.1 += 1;
        }
        BucketScores::from_groups(
            groups
                .into_iter()
                .map(|(key, (ok, n))| (stats.bucket(kind, key), ok as f64 / n as f64)),
        )
    };
    Ok(CompositionalReport {
        so: score(PairKind::So),
        sr: score(PairKind::Sr),
        or: score(PairKind::Or),
    })
}

/// Relation scores of every ground-truth pair in a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRelationScores {
    /// `N × C` scores; row `i` belongs to ground-truth pair `i`.
    pub scores: Tensor,
    pub gt: Vec<usize>,
}

impl SceneRelationScores {
    pub fn new(scores: Tensor, gt: Vec<usize>) -> Result<Self> {
        if scores.rows() != gt.len() || gt.is_empty() {
            return Err(shape_err("recall", "one score row per ground-truth triplet"));
        }
        if let Some(&g) = gt.iter().find(|&&g| g >= scores.cols()) {
            return Err(Error::LabelOutOfRange { id: g, size: scores.cols() });
        }
        Ok(Self { scores, gt })
    }

    /// Whether each ground-truth triplet is in the top `k` `(pair, relation)`
    /// candidates. Ties rank the lower pair index, then the lower relation, first.
    pub fn hits(&self, k: usize) -> Vec<bool> {
        let (n, c) = self.scores.dims();
        let mut cand: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..c).map(move |j| (i, j))).collect();
        let s = &self.scores;
        cand.sort_by(|a, b| s.get(b.0, b.1).total_cmp(&s.get(a.0, a.1)).then(a.cmp(b)));
        let mut hit = vec![false; n];
        for &(i, j) in cand.iter().take(k) {
            if self.gt[i] == j {
                hit[i] = true;
            }
        }
        hit
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of ground-truth triplets in each scene's top `k`, averaged over scenes.
pub fn recall_at_k(scenes: &[SceneRelationScores], k: usize) -> Result<f64> {
    check_k(k)?;
    if scenes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let total: f64 = scenes
        .iter()
        .map(|s| {
            let h = s.hits(k);
            h.iter().filter(|&&x| x).count() as f64 / h.len() as f64
        })
        .sum();
    Ok(total / scenes.len() as f64)
}

/// Per relation class: recall over that class's triplets in each scene
/// containing it, averaged over those scenes. Then the mean over classes.
pub fn mean_recall_at_k(scenes: &[SceneRelationScores], k: usize) -> Result<f64> {
    check_k(k)?;
    if scenes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut per_class: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in scenes {
        let h = s.hits(k);
        let mut local: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (i, &g) in s.gt.iter().enumerate() {
            let e = local.entry(g).or_default();
            e.0 += usize::from(h[i]);
            e.1 += 1;
        }
        for (c, (hit, n)) in local {
            let e = per_class.entry(c).or_default();
            e.0 += hit as f64 / n as f64;
            e.1 += 1;
        }
    }
    let sum: f64 = per_class.values().map(|(s, n)| s / *n as f64).sum();
    Ok(sum / per_class.len() as f64)
}

/// Spearman rank correlation with average ranks for ties; 0 when undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return 0.0;
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryClassScore {
    pub class: usize,
    pub train_count: usize,
    /// 0 for the most frequent training class.
    pub frequency_rank: usize,
    pub samples: usize,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    /// Observed classes, most frequent first.
    pub classes: Vec<MemoryClassScore>,
    /// Correlation between frequency rank and mean score; positive means
    /// rarer classes lean more on memory.
    pub spearman: f64,
}

/// Aggregates `(relation class, score)` samples into per-class means.
pub fn memory_report_from_samples(
    samples: &[(usize, f64)],
    buckets: &BucketAssignment,
    train_counts: &[usize],
) -> Result<MemoryReport> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let ranks = buckets.frequency_rank();
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(c, s) in samples {
        if c >= ranks.len() {
            return Err(Error::LabelOutOfRange { id: c, size: ranks.len() });
        }
        let e = acc.entry(c).or_default();
        e.0 += s;
        e.1 += 1;
    }
    let mut classes: Vec<MemoryClassScore> = acc
        .into_iter()
        .map(|(class, (sum, n))| MemoryClassScore {
            class,
            train_count: train_counts.get(class).copied().unwrap_or(0),
            frequency_rank: ranks[class],
            samples: n,
            mean_score: sum / n as f64,
        })
        .collect();
    classes.sort_by_key(|c| c.frequency_rank);
    let x: Vec<f64> = classes.iter().map(|c| c.frequency_rank as f64).collect();
    let y: Vec<f64> = classes.iter().map(|c| c.mean_score).collect();
    Ok(MemoryReport {
        spearman: spearman(&x, &y),
        classes,
    })
}

/// Mean gate complement on the relation-token row, over layers and hidden
/// units, for every triplet in `scenes`.
pub fn memory_attention_report(model: &Model, scenes: &[SceneSample], buckets: &BucketAssignment, train_counts: &[usize]) -> Result<MemoryReport> {
    if model.config.disable_memory {
        return Err(Error::Config("memory attention report needs a model with memory enabled".into()));
    }
    let per_scene = scenes
        .par_iter()
        .map(|scene| {
            let p = model.predict(scene)?;
            Ok(relation_memory_scores(scene, &p.memory_scores))
        })
        .collect::<Result<Vec<_>>>()?;
    memory_report_from_samples(&per_scene.concat(), buckets, train_counts)
}

fn relation_memory_scores(scene: &SceneSample, layers: &[Tensor]) -> Vec<(usize, f64)> {
    scene
        .triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut sum = 0.0;
            let mut n = 0;
            for layer in layers {
                let row = layer.row(3 * i + 1);
                sum += row.iter().sum::<f64>();
                n += row.len();
            }
            (t.relation_label, sum / n as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerExampleReport {
    pub subject: f64,
    pub relation: f64,
    pub object: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub scenes: usize,
    pub triplets: usize,
    pub relation: PerClassReport,
    pub subject: PerClassReport,
    pub object: PerClassReport,
    pub per_example: PerExampleReport,
    pub compositional: CompositionalReport,
    pub recall: Vec<RecallRow>,
    pub memory: Option<MemoryReport>,
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl MetricsReport {
    /// Plain-text tables; accuracies in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split: {}  scenes: {}  triplets: {}", self.split, self.scenes, self.triplets);
        let _ = writeln!(out);
        let _ = writeln!(out, "per-class accuracy (%)");
        let _ = writeln!(out, "{:<12}{:>8}{:>8}{:>8}{:>8}", "", "many", "medium", "few", "all");
        let rows: [(&str, &BucketScores); 6] = [
            ("relation", &self.relation.buckets),
            ("subject", &self.subject.buckets),
            ("object", &self.object.buckets),
            ("SO", &self.compositional.so),
            ("SR", &self.compositional.sr),
            ("OR", &self.compositional.or),
        ];
        for (i, (name, b)) in rows.iter().enumerate() {
            if i == 3 {
                let _ = writeln!(out, "compositional pairs (%)");
            }
            let _ = writeln!(
                out,
                "{:<12}{:>8}{:>8}{:>8}{:>8}",
                name,
                fmt_score(b.many),
                fmt_score(b.medium),
                fmt_score(b.few),
                fmt_score(b.all)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "per-example accuracy (%)");
        let p = &self.per_example;
        let _ = writeln!(
            out,
            "{:<12}{:>8}\n{:<12}{:>8}\n{:<12}{:>8}",
            "relation",
            fmt_score(Some(p.relation)),
            "subject",
            fmt_score(Some(p.subject)),
            "object",
            fmt_score(Some(p.object))
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12}{:>10}{:>10}", "K", "R@K", "mR@K");
        for r in &self.recall {
            let _ = writeln!(out, "{:<12}{:>10.2}{:>10.2}", r.k, 100.0 * r.recall, 100.0 * r.mean_recall);
        }
        if let Some(m) = &self.memory {
            let _ = writeln!(out);
            let _ = write!(out, "{}", memory_table(m));
        }
        out
    }
}

pub fn memory_table(m: &MemoryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "memory attention by relation class (most frequent first)");
    let _ = writeln!(out, "{:>6}{:>8}{:>8}{:>10}{:>12}", "class", "rank", "train", "samples", "mean J-a");
    for c in &m.classes {
        let _ = writeln!(
            out,
            "{:>6}{:>8}{:>8}{:>10}{:>12.6}",
            c.class, c.frequency_rank, c.train_count, c.samples, c.mean_score
        );
    }
    let _ = writeln!(out, "spearman(rank, score) = {:.4}", m.spearman);
    out
}

fn triples(scenes: &[SceneSample]) -> Vec<TripleLabels> {
    scenes
        .iter()
        .flat_map(|s| s.triplets.iter())
        .map(|t| TripleLabels {
            subject: t.subject_label,
            relation: t.relation_label,
            object: t.object_label,
        })
        .collect()
}

/// Runs the model over a split and computes every metric.
pub fn evaluate(model: &Model, dataset: &Dataset, split: &str, ks: &[usize]) -> Result<MetricsReport> {
    let scenes = dataset
        .split(split)
        .ok_or_else(|| Error::Config(format!("unknown split {split:?}; expected train, val or test")))?;
    if scenes.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let manifest = &dataset.manifest;
    let rel_buckets = manifest.relation_buckets()?;
    let obj_buckets = manifest.object_buckets()?;
    let preds = scenes.par_iter().map(|s| model.predict(s)).collect::<Result<Vec<_>>>()?;

    let gts = triples(scenes);
    let mut predicted = Vec::with_capacity(gts.len());
    let mut recall_inputs = Vec::with_capacity(scenes.len());
    let mut memory_samples = Vec::new();
    for (scene, p) in scenes.iter().zip(&preds) {
        let (s, r, o) = (p.subjects(), p.relations(), p.objects());
        for i in 0..scene.len() {
            predicted.push(TripleLabels { subject: s[i], relation: r[i], object: o[i] });
        }
        let probs = p.relation_probabilities(model.config.temperature)?;
        recall_inputs.push(SceneRelationScores::new(probs, scene.triplets.iter().map(|t| t.relation_label).collect())?);
        memory_samples.extend(relation_memory_scores(scene, &p.memory_scores));
    }
    let pick = |v: &[TripleLabels], f: fn(&TripleLabels) -> usize| v.iter().map(f).collect::<Vec<_>>();
    let (ps, pr, po) = (pick(&predicted, |t| t.subject), pick(&predicted, |t| t.relation), pick(&predicted, |t| t.object));
    let (gs, gr, go) = (pick(&gts, |t| t.subject), pick(&gts, |t| t.relation), pick(&gts, |t| t.object));

    let stats = PairStatistics::new(&triples(&dataset.train), &rel_buckets, &manifest.relation_counts)?;
    let recall = ks
        .iter()
        .map(|&k| {
            Ok(RecallRow {
                k,
                recall: recall_at_k(&recall_inputs, k)?,
                mean_recall: mean_recall_at_k(&recall_inputs, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let memory = if model.config.disable_memory {
        None
    } else {
        Some(memory_report_from_samples(&memory_samples, &rel_buckets, &manifest.relation_counts)?)
    };
    Ok(MetricsReport {
        split: split.to_string(),
        scenes: scenes.len(),
        triplets: gts.len(),
        relation: evaluate_per_class(&pr, &gr, &rel_buckets)?,
        subject: evaluate_per_class(&ps, &gs, &obj_buckets)?,
        object: evaluate_per_class(&po, &go, &obj_buckets)?,
        per_example: PerExampleReport {
            subject: evaluate_per_example(&ps, &gs)?,
            relation: evaluate_per_example(&pr, &gr)?,
            object: evaluate_per_example(&po, &go)?,
        },
        compositional: evaluate_compositional(&predicted, &gts, &stats)?,
        recall,
        memory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bucket_classes;

    fn one_bucket(c: usize) -> BucketAssignment {
        bucket_classes(&vec![1; c], (c - 1, 1)).unwrap()
    }

    #[test]
    fn per_class_hand_example() {
        // A: 2/2, B: 1/2, C: 0/1
        let gts = [0, 0, 1, 1, 2];
        let preds = [0, 0, 1, 0, 1];
        let b = bucket_classes(&[10, 10, 10, 0], (1, 1)).unwrap();
        let r = evaluate_per_class(&preds, &gts, &b).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.5), Some(0.0), None]);
        assert!((r.buckets.all.unwrap() - 0.5).abs() < 1e-15);
        // class 3 is absent, so the few bucket holds only class 2
        assert_eq!(r.buckets.few, Some(0.0));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = [0, 1, 2, 2, 3];
        let b = bucket_classes(&[4, 3, 2, 1], (1, 1)).unwrap();
        let r = evaluate_per_class(&gts, &gts, &b).unwrap();
        for bucket in Bucket::ALL {
            assert_eq!(r.buckets.get(bucket), Some(1.0));
        }
        assert_eq!(evaluate_per_example(&gts, &gts).unwrap(), 1.0);
    }

    #[test]
    fn per_example_basics() {
        assert_eq!(evaluate_per_example(&[1, 2, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.75);
        assert!(matches!(evaluate_per_example(&[], &[]), Err(Error::EmptyEvaluation)));
        assert!(evaluate_per_example(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn per_example_equals_per_class_for_balanced_counts() {
        let gts = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 0, 0];
        let r = evaluate_per_class(&preds, &gts, &one_bucket(3)).unwrap();
        assert!((r.buckets.all.unwrap() - evaluate_per_example(&preds, &gts).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn skewed_confusion_separates_the_two_accuracies() {
        // 90 head items all right, 10 tail items all wrong, across many tail classes
        let mut gts = vec![0; 90];
        gts.extend(1..=10);
        let preds = vec![0; 100];
        let counts: Vec<usize> = std::iter::once(90).chain(std::iter::repeat_n(1, 10)).collect();
        let b = bucket_classes(&counts, (1, 1)).unwrap();
        let pc = evaluate_per_class(&preds, &gts, &b).unwrap();
        let pe = evaluate_per_example(&preds, &gts).unwrap();
        assert_eq!(pe, 0.9);
        assert_eq!(pc.buckets.few, Some(0.0));
        assert!((pc.buckets.all.unwrap() - 1.0 / 11.0).abs() < 1e-15);
    }

    fn t(s: usize, r: usize, o: usize) -> TripleLabels {
        TripleLabels { subject: s, relation: r, object: o }
    }

    #[test]
    fn compositional_hand_example() {
        let train = [t(0, 0, 1), t(0, 0, 1), t(0, 1, 1), t(1, 0, 0)];
        let rb = bucket_classes(&[3, 1], (1, 1)).unwrap();
        let stats = PairStatistics::new(&train, &rb, &[3, 1]).unwrap();
        assert_eq!(stats.thresholds, (3.0, 1.0));
        let gts = [t(0, 0, 1), t(0, 0, 1), t(1, 1, 0), t(0, 1, 1)];
        let preds = [t(0, 0, 1), t(0, 1, 0), t(1, 1, 1), t(1, 1, 1)];
        let r = evaluate_compositional(&preds, &gts, &stats).unwrap();
        // SO pairs: (0,1) -> [ok, no, no] = 1/3, count 3 in train -> many; (1,0) -> [no] = 0, count 1 -> medium
        assert_eq!(r.so.many, Some(1.0 / 3.0));
        assert_eq!(r.so.medium, Some(0.0));
        assert_eq!(r.so.all, Some(1.0 / 6.0));
        // SR pairs: (0,0) -> [ok, no], train 2 -> medium; (1,1) -> [ok], unseen: 1*1/4 -> few; (0,1) -> [no], train 1 -> medium
        assert_eq!(r.sr.medium, Some(0.25));
        assert_eq!(r.sr.few, Some(1.0));
        assert_eq!(r.sr.many, None);
        // OR pairs: (1,0) -> [ok, no] train 2 medium; (0,1) -> [no] unseen 1*1/4 few; (1,1) -> [ok] train 1 medium
        assert_eq!(r.or.medium, Some(0.75));
        assert_eq!(r.or.few, Some(0.0));
    }

    #[test]
    fn compositional_extremes() {
        let rb = bucket_classes(&[3, 1], (1, 1)).unwrap();
        let gts = [t(0, 0, 1), t(1, 1, 0)];
        let stats = PairStatistics::new(&gts, &rb, &[3, 1]).unwrap();
        let all = evaluate_compositional(&gts, &gts, &stats).unwrap();
        for kind in PairKind::ALL {
            assert_eq!(all.get(kind).all, Some(1.0));
        }
        let wrong_subject = [t(1, 0, 1), t(0, 1, 0)];
        let r = evaluate_compositional(&wrong_subject, &gts, &stats).unwrap();
        assert_eq!(r.so.all, Some(0.0));
        assert_eq!(r.sr.all, Some(0.0));
        assert_eq!(r.or.all, Some(1.0));
    }

    fn scene(scores: Vec<Vec<f64>>, gt: Vec<usize>) -> SceneRelationScores {
        SceneRelationScores::new(Tensor::from_rows(&scores).unwrap(), gt).unwrap()
    }

    #[test]
    fn recall_examples() {
        let s = scene(vec![vec![0.9, 0.1], vec![0.3, 0.7]], vec![0, 0]);
        assert_eq!(recall_at_k(std::slice::from_ref(&s), 1).unwrap(), 0.5);
        assert_eq!(recall_at_k(std::slice::from_ref(&s), 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(std::slice::from_ref(&s), 100).unwrap(), 1.0);
        assert!(recall_at_k(std::slice::from_ref(&s), 0).is_err());
        // second candidate by rank is (1,1); (1,0) only enters at K = 3
        assert_eq!(recall_at_k(std::slice::from_ref(&s), 2).unwrap(), 0.5);
        assert_eq!(recall_at_k(std::slice::from_ref(&s), 3).unwrap(), 1.0);
    }

    #[test]
    fn ties_prefer_lower_pair_then_relation() {
        let s = scene(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1, 0]);
        // order: (0,0), (0,1), (1,0), (1,1)
        assert_eq!(s.hits(1), vec![false, false]);
        assert_eq!(s.hits(2), vec![true, false]);
        assert_eq!(s.hits(3), vec![true, true]);
    }

    #[test]
    fn mean_recall_averages_classes() {
        let a = scene(vec![vec![0.9, 0.1], vec![0.8, 0.2]], vec![0, 1]);
        // K=1: class 0 hit, class 1 missed
        assert_eq!(mean_recall_at_k(&[a], 1).unwrap(), 0.5);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]), 0.0);
        // scipy.stats.spearmanr([0,1,2,3,4], [1,3,2,2,5]) = 0.6668859288553501
        assert!((spearman(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 2.0, 5.0]) - 0.6668859288553501).abs() < 1e-12);
    }

    #[test]
    fn memory_report_untrained_gate() {
        let b = bucket_classes(&[5, 3, 1], (1, 1)).unwrap();
        let samples = [(0, 0.5), (2, 0.5), (0, 0.5)];
        let r = memory_report_from_samples(&samples, &b, &[5, 3, 1]).unwrap();
        assert_eq!(r.classes.len(), 2);
        assert!(r.classes.iter().all(|c| c.mean_score == 0.5));
        assert_eq!(r.spearman, 0.0);
        assert_eq!(r.classes[0].samples, 2);
    }
}
