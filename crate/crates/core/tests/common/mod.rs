//! Brute-force metric implementations and random tiny instances to compare
//! the library against.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triplet_transformer::data::{bucket_classes, Bucket, BucketAssignment};
use triplet_transformer::metrics::{
    evaluate_compositional, evaluate_per_class, evaluate_per_example, mean_recall_at_k, recall_at_k, BucketScores,
    PairKind, PairStatistics, SceneRelationScores, TripleLabels,
};
use triplet_transformer::numerics::Tensor;

pub struct Instance {
    pub num_objects: usize,
    pub num_relations: usize,
    pub cutoffs: (usize, usize),
    pub train: Vec<TripleLabels>,
    /// Per scene: ground truth, prediction and `N × C_rel` scores.
    pub scenes: Vec<(Vec<TripleLabels>, Vec<TripleLabels>, Vec<Vec<f64>>)>,
    pub k: usize,
}

fn triple(rng: &mut ChaCha8Rng, objects: usize, relations: usize) -> TripleLabels {
    TripleLabels {
        subject: rng.random_range(0..objects),
        relation: rng.random_range(0..relations),
        object: rng.random_range(0..objects),
    }
}

/// Small vocabularies and coarse score values, so ties and unseen pairs are common.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_objects = rng.random_range(2..=4);
    let num_relations = rng.random_range(3..=6);
    let many = rng.random_range(1..num_relations);
    let medium = rng.random_range(1..=num_relations - many);
    let train = (0..rng.random_range(1..=20)).map(|_| triple(&mut rng, num_objects, num_relations)).collect();
    let scenes = (0..rng.random_range(1..=4))
        .map(|_| {
            let n = rng.random_range(1..=5);
            let gt: Vec<_> = (0..n).map(|_| triple(&mut rng, num_objects, num_relations)).collect();
            let pred: Vec<_> = gt
                .iter()
                .map(|g| if rng.random_bool(0.5) { *g } else { triple(&mut rng, num_objects, num_relations) })
                .collect();
            let scores = (0..n)
                .map(|_| (0..num_relations).map(|_| rng.random_range(0..4) as f64 * 0.1).collect())
                .collect();
            (gt, pred, scores)
        })
        .collect();
    let k = rng.random_range(1..=12);
    Instance { num_objects, num_relations, cutoffs: (many, medium), train, scenes, k }
}

fn mean_by_bucket(items: &[(Bucket, f64)]) -> BucketScores {
    let mean = |pick: &dyn Fn(Bucket) -> bool| {
        let mut s = 0.0;
        let mut n = 0;
        for &(b, v) in items {
            if pick(b) {
                s += v;
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    };
    BucketScores {
        many: mean(&|b| b == Bucket::Many),
        medium: mean(&|b| b == Bucket::Medium),
        few: mean(&|b| b == Bucket::Few),
        all: mean(&|_| true),
    }
}

/// Rank `r` class lands in bucket many if `r < many`, and so on.
pub fn brute_buckets(counts: &[usize], (many, medium): (usize, usize)) -> Vec<Bucket> {
    (0..counts.len())
        .map(|c| {
            let rank = (0..counts.len())
                .filter(|&d| counts[d] > counts[c] || (counts[d] == counts[c] && d < c))
                .count();
            if rank < many {
                Bucket::Many
            } else if rank < many + medium {
                Bucket::Medium
            } else {
                Bucket::Few
            }
        })
        .collect()
}

pub fn brute_per_class(preds: &[usize], gts: &[usize], buckets: &[Bucket]) -> (Vec<Option<f64>>, BucketScores) {
    let per_class: Vec<Option<f64>> = (0..buckets.len())
        .map(|c| {
            let n = gts.iter().filter(|&&g| g == c).count();
            let ok = preds.iter().zip(gts).filter(|&(&p, &g)| g == c && p == c).count();
            (n > 0).then(|| ok as f64 / n as f64)
        })
        .collect();
    let items: Vec<(Bucket, f64)> = per_class.iter().enumerate().filter_map(|(c, a)| a.map(|a| (buckets[c], a))).collect();
    (per_class, mean_by_bucket(&items))
}

fn pair(kind: PairKind, t: &TripleLabels) -> (usize, usize) {
    match kind {
        PairKind::So => (t.subject, t.object),
        PairKind::Sr => (t.subject, t.relation),
        PairKind::Or => (t.object, t.relation),
    }
}

fn role_values(kind: PairKind, t: &TripleLabels) -> (usize, usize) {
    pair(kind, t)
}

pub fn brute_compositional(
    kind: PairKind,
    preds: &[TripleLabels],
    gts: &[TripleLabels],
    train: &[TripleLabels],
    relation_counts: &[usize],
    relation_buckets: &[Bucket],
) -> BucketScores {
    let threshold = |b: Bucket| {
        (0..relation_counts.len())
            .filter(|&c| relation_buckets[c] == b)
            .map(|c| relation_counts[c] as f64)
            .fold(f64::INFINITY, f64::min)
    };
    let (t_many, t_medium) = (threshold(Bucket::Many), threshold(Bucket::Medium));
    let mut keys: Vec<(usize, usize)> = gts.iter().map(|g| pair(kind, g)).collect();
    keys.sort();
    keys.dedup();
    let items: Vec<(Bucket, f64)> = keys
        .iter()
        .map(|&key| {
            let n = gts.iter().filter(|g| pair(kind, g) == key).count();
            let ok = preds.iter().zip(gts).filter(|(p, g)| pair(kind, g) == key && pair(kind, p) == key).count();
            let seen = train.iter().filter(|t| pair(kind, t) == key).count();
            let freq = if seen > 0 {
                seen as f64
            } else {
                let fa = train.iter().filter(|t| role_values(kind, t).0 == key.0).count() as f64;
                let fb = train.iter().filter(|t| role_values(kind, t).1 == key.1).count() as f64;
                fa * fb / train.len() as f64
            };
            let bucket = if freq >= t_many {
                Bucket::Many
            } else if freq >= t_medium {
                Bucket::Medium
            } else {
                Bucket::Few
            };
            (bucket, ok as f64 / n as f64)
        })
        .collect();
    mean_by_bucket(&items)
}

/// Ground truth `i` is a hit when fewer than `k` candidates outrank it.
pub fn brute_hits(scores: &[Vec<f64>], gt: &[usize], k: usize) -> Vec<bool> {
    gt.iter()
        .enumerate()
        .map(|(i, &g)| {
            let mine = scores[i][g];
            let mut ahead = 0;
            for (j, row) in scores.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    if v > mine || (v == mine && (j, c) < (i, g)) {
                        ahead += 1;
                    }
                }
            }
            ahead < k
        })
        .collect()
}

pub fn brute_recall(scenes: &[(Vec<Vec<f64>>, Vec<usize>)], k: usize) -> f64 {
    let mut total = 0.0;
    for (scores, gt) in scenes {
        let h = brute_hits(scores, gt, k);
        total += h.iter().filter(|&&x| x).count() as f64 / gt.len() as f64;
    }
    total / scenes.len() as f64
}

pub fn brute_mean_recall(scenes: &[(Vec<Vec<f64>>, Vec<usize>)], k: usize, classes: usize) -> f64 {
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let mut acc = 0.0;
        let mut n_scenes = 0;
        for (scores, gt) in scenes {
            let n = gt.iter().filter(|&&g| g == c).count();
            if n == 0 {
                continue;
            }
            let h = brute_hits(scores, gt, k);
            let hit = gt.iter().zip(&h).filter(|&(&g, &x)| g == c && x).count();
            acc += hit as f64 / n as f64;
            n_scenes += 1;
        }
        if n_scenes > 0 {
            sum += acc / n_scenes as f64;
            present += 1;
        }
    }
    sum / present as f64
}

fn expect<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: library {got:?}, brute force {want:?}"))
    }
}

/// Every metric of one instance, library against brute force, compared exactly.
pub fn check_instance(inst: &Instance) -> Result<(), String> {
    let err = |e: triplet_transformer::Error| e.to_string();
    let mut relation_counts = vec![0; inst.num_relations];
    for t in &inst.train {
        relation_counts[t.relation] += 1;
    }
    let assignment: BucketAssignment = bucket_classes(&relation_counts, inst.cutoffs).map_err(err)?;
    let brute_b = brute_buckets(&relation_counts, inst.cutoffs);
    expect("buckets", assignment.buckets.clone(), brute_b.clone())?;

    let gts: Vec<TripleLabels> = inst.scenes.iter().flat_map(|s| s.0.iter().copied()).collect();
    let preds: Vec<TripleLabels> = inst.scenes.iter().flat_map(|s| s.1.iter().copied()).collect();
    let gr: Vec<usize> = gts.iter().map(|t| t.relation).collect();
    let pr: Vec<usize> = preds.iter().map(|t| t.relation).collect();

    let lib = evaluate_per_class(&pr, &gr, &assignment).map_err(err)?;
    let (per_class, buckets) = brute_per_class(&pr, &gr, &brute_b);
    expect("per-class accuracy", lib.per_class, per_class)?;
    expect("per-class buckets", lib.buckets, buckets)?;

    let ok = pr.iter().zip(&gr).filter(|(p, g)| p == g).count();
    expect("per-example", evaluate_per_example(&pr, &gr).map_err(err)?, ok as f64 / gr.len() as f64)?;

    let stats = PairStatistics::new(&inst.train, &assignment, &relation_counts).map_err(err)?;
    let comp = evaluate_compositional(&preds, &gts, &stats).map_err(err)?;
    for kind in PairKind::ALL {
        let want = brute_compositional(kind, &preds, &gts, &inst.train, &relation_counts, &brute_b);
        expect(&format!("compositional {kind:?}"), comp.get(kind).clone(), want)?;
    }

    let lib_scenes: Vec<SceneRelationScores> = inst
        .scenes
        .iter()
        .map(|(gt, _, scores)| {
            let t = Tensor::from_rows(scores).expect("rectangular scores");
            SceneRelationScores::new(t, gt.iter().map(|g| g.relation).collect())
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let plain: Vec<(Vec<Vec<f64>>, Vec<usize>)> =
        inst.scenes.iter().map(|(gt, _, s)| (s.clone(), gt.iter().map(|g| g.relation).collect())).collect();
    for k in [1, inst.k, 1000] {
        expect(&format!("recall@{k}"), recall_at_k(&lib_scenes, k).map_err(err)?, brute_recall(&plain, k))?;
        expect(
            &format!("mean recall@{k}"),
            mean_recall_at_k(&lib_scenes, k).map_err(err)?,
            brute_mean_recall(&plain, k, inst.num_relations),
        )?;
    }
    Ok(())
}
