//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The two directional trend checks are reported like the others but do not
//! change the exit status; every other failure makes the run exit non-zero.

mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use triplet_transformer::attention::{multi_head_attention, AttentionMask, AttentionParams};
use triplet_transformer::data::{
    bucket_classes, generate_dataset, write_dataset, Bucket, GeneratorConfig, SceneSample, TripletSample,
};
use triplet_transformer::global_encoder::{encode_scene, pack_triplets, GlobalEncoderParams};
use triplet_transformer::head::{classification_loss, LossConfig, LossMode};
use triplet_transformer::metrics::evaluate;
use triplet_transformer::model::{model_grad_check, GradCheckSetup, Model, ModelConfig};
use triplet_transformer::numerics::{ParamInit, ParamSet, Tape, Tensor};
use triplet_transformer::relational::{gate_fuse, GateParams};
use triplet_transformer::train::{train, train_with_observer, TrainConfig};

type Outcome = Result<String, String>;

fn random_scene(n: usize, d: usize, rng: &mut ChaCha8Rng) -> SceneSample {
    let mut v = || Tensor::randn(&[d], 1.0, rng).into_data();
    SceneSample {
        id: "random".into(),
        triplets: (0..n)
            .map(|_| TripletSample {
                subject_label: 0,
                relation_label: 0,
                object_label: 0,
                subject: v(),
                relation: v(),
                object: v(),
                boxes: None,
            })
            .collect(),
    }
}

fn gradient_verification() -> Outcome {
    let start = Instant::now();
    let report = model_grad_check(&GradCheckSetup::default(), 1e-5, 1e-5).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max_rel_err {:.2e} over {} entries in {secs:.1}s",
        report.max_rel_error, report.entries_checked
    );
    if report.max_rel_error < 1e-5 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn permutation_equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamSet::new();
    let enc = GlobalEncoderParams::init(&mut ParamInit::new(&mut params, &mut rng), 4, 16, 2, 2).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let scene = random_scene(n, 4, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted = SceneSample {
            id: "permuted".into(),
            triplets: perm.iter().map(|&i| scene.triplets[i].clone()).collect(),
        };
        let mut tape = Tape::with_params(&params);
        let a = encode_scene(&mut tape, &pack_triplets(&scene).unwrap(), &enc).map_err(|e| e.to_string())?;
        let b = encode_scene(&mut tape, &pack_triplets(&permuted).unwrap(), &enc).map_err(|e| e.to_string())?;
        for (&za, &zb) in a.layers.iter().zip(&b.layers) {
            let expected = tape.value(za).gather_rows(&perm).unwrap();
            worst = worst.max(expected.max_abs_diff(tape.value(zb)));
        }
    }
    let detail = format!("max deviation {worst:.2e} over 100 permutations");
    if worst < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn attention_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst, mut masked_mass, mut maps) = (0.0f64, 0.0f64, 0usize);
    let mut check = |tape: &Tape<'_>| {
        for (w, mask) in tape.attention_maps() {
            maps += 1;
            let cols = w.cols();
            for r in 0..w.rows() {
                let row = w.row(r);
                let allowed = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
                let sum: f64 = row.iter().enumerate().filter(|&(j, _)| allowed(j)).map(|(_, v)| v).sum();
                worst = worst.max((sum - 1.0).abs());
                masked_mass += row.iter().enumerate().filter(|&(j, _)| !allowed(j)).map(|(_, v)| v.abs()).sum::<f64>();
            }
        }
    };
    for pass in 0..1000 {
        if pass % 4 == 3 {
            // padded keys through a bare attention block
            let mut params = ParamSet::new();
            let h = 8;
            let attn = AttentionParams::init(&mut ParamInit::new(&mut params, &mut rng), "a", h, 2, true).unwrap();
            let (q, k) = (rng.random_range(1..6), rng.random_range(1..8));
            let mut valid: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
            valid[rng.random_range(0..k)] = true;
            let mask = AttentionMask::key_padding(q, &valid).unwrap();
            let scale = rng.random_range(0.1..20.0);
            let mut tape = Tape::with_params(&params);
            let x = tape.constant(Tensor::randn(&[q, h], scale, &mut rng));
            let y = tape.constant(Tensor::randn(&[k, h], scale, &mut rng));
            multi_head_attention(&mut tape, x, y, y, &attn, Some(&mask)).map_err(|e| e.to_string())?;
            check(&tape);
            continue;
        }
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let config = ModelConfig {
            feature_dim: 4,
            hidden: 8,
            heads,
            global_layers: rng.random_range(1..=2),
            relational_layers: rng.random_range(1..=2),
            memory_slots: rng.random_range(1..=4),
            embedding_dim: 6,
            num_objects: 3,
            num_relations: 3,
            disable_global: rng.random_bool(0.25),
            disable_memory: rng.random_bool(0.25),
            ..ModelConfig::default()
        };
        let model = Model::new(config, pass as u64).map_err(|e| e.to_string())?;
        let scene = random_scene(rng.random_range(1..=6), 4, &mut rng);
        let mut tape = Tape::with_params(&model.params);
        model.forward(&mut tape, &scene).map_err(|e| e.to_string())?;
        check(&tape);
    }
    let detail = format!("max |row sum - 1| {worst:.2e}, masked mass {masked_mass:e} over {maps} maps");
    if worst <= 1e-6 && masked_mass == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gate_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut violations = 0;
    for _ in 0..10_000 {
        let h = rng.random_range(1..=8);
        let rows = rng.random_range(1..=3);
        let mut params = ParamSet::new();
        let std = rng.random_range(0.1..5.0);
        let gate = GateParams {
            weight: params.add("w", Tensor::randn(&[2 * h, h], std, &mut rng)),
            bias: params.add("b", Tensor::randn(&[h], std, &mut rng)),
        };
        let (xs, ys) = (Tensor::randn(&[rows, h], 3.0, &mut rng), Tensor::randn(&[rows, h], 3.0, &mut rng));
        let mut tape = Tape::with_params(&params);
        let (x, y) = (tape.constant(xs.clone()), tape.constant(ys.clone()));
        let out = gate_fuse(&mut tape, x, y, &gate).map_err(|e| e.to_string())?;
        for ((&f, &a), &b) in tape.value(out.fused).data().iter().zip(xs.data()).zip(ys.data()) {
            if f < a.min(b) || f > a.max(b) {
                violations += 1;
            }
        }
    }
    let mut params = ParamSet::new();
    let h = 6;
    let gate = GateParams {
        weight: params.add("w", Tensor::zeros(&[2 * h, h])),
        bias: params.add("b", Tensor::zeros(&[h])),
    };
    let (xs, ys) = (Tensor::randn(&[4, h], 2.0, &mut rng), Tensor::randn(&[4, h], 2.0, &mut rng));
    let mut tape = Tape::with_params(&params);
    let (x, y) = (tape.constant(xs.clone()), tape.constant(ys.clone()));
    let out = gate_fuse(&mut tape, x, y, &gate).map_err(|e| e.to_string())?;
    let exact_mean = tape
        .value(out.fused)
        .data()
        .iter()
        .zip(xs.data().iter().zip(ys.data()))
        .all(|(&f, (&a, &b))| f == (a + b) / 2.0);
    let detail = format!("{violations} out-of-range entries in 10000 draws; zero gate gives exact mean: {exact_mean}");
    if violations == 0 && exact_mean {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut focal_dev, mut wce_dev, mut uniform_dev) = (0.0f64, 0.0f64, 0.0f64);
    let ce = LossConfig { mode: LossMode::Ce, ..LossConfig::default() };
    let focal = LossConfig { mode: LossMode::Focal, gamma: 0.0 };
    let wce = LossConfig { mode: LossMode::Wce, ..LossConfig::default() };
    let err = |e: triplet_transformer::Error| e.to_string();
    for _ in 0..1000 {
        let c = rng.random_range(2..=40);
        let logits = Tensor::randn(&[1, c], rng.random_range(0.1..3.0), &mut rng);
        let target = rng.random_range(0..c);
        let tau = rng.random_range(0.05..2.0);
        let base = classification_loss(&logits, target, tau, &ce, None).map_err(err)?;
        let f = classification_loss(&logits, target, tau, &focal, None).map_err(err)?;
        let w = classification_loss(&logits, target, tau, &wce, Some(&vec![1.0; c])).map_err(err)?;
        focal_dev = focal_dev.max((f - base).abs());
        wce_dev = wce_dev.max((w - base).abs());
        let level = rng.random_range(-5.0..5.0);
        let flat = Tensor::matrix(1, c, vec![level; c]).unwrap();
        let u = classification_loss(&flat, target, tau, &ce, None).map_err(err)?;
        uniform_dev = uniform_dev.max((u - (c as f64).ln()).abs());
    }
    let detail = format!("focal(0) {focal_dev:.1e}, unit WCE {wce_dev:.1e}, uniform vs ln C {uniform_dev:.1e}");
    if focal_dev <= 1e-12 && wce_dev <= 1e-12 && uniform_dev <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracles() -> Outcome {
    for seed in 0..200 {
        common::check_instance(&common::random_instance(seed)).map_err(|e| format!("instance {seed}: {e}"))?;
    }
    Ok("200 random instances match exactly".into())
}

fn train_accuracy(model: &Model, data: &triplet_transformer::data::Dataset) -> f64 {
    let mut ok = 0;
    let mut n = 0;
    for scene in &data.train {
        let pred = model.predict(scene).expect("prediction").relations();
        for (p, t) in pred.iter().zip(&scene.triplets) {
            ok += usize::from(*p == t.relation_label);
            n += 1;
        }
    }
    ok as f64 / n as f64
}

fn overfit_smoke() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut all_ok = true;
    for seed in 0..3u64 {
        let data = generate_dataset(&GeneratorConfig {
            scenes: 32,
            num_relations: 20,
            train_fraction: 1.0,
            val_fraction: 0.0,
            seed,
            ..GeneratorConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let mut config = TrainConfig { epochs: 200, seed, ..TrainConfig::default() };
        config.fit_dataset(&data.manifest);
        let mut reached = None;
        let mut best: f64 = 0.0;
        train_with_observer(&config, &data, |epoch, model| {
            if reached.is_none() && (epoch + 1) % 5 == 0 {
                let acc = train_accuracy(model, &data);
                best = best.max(acc);
                if acc >= 0.99 {
                    reached = Some(epoch + 1);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        match reached {
            Some(e) => lines.push(format!("seed {seed}: epoch {e}")),
            None => {
                all_ok = false;
                lines.push(format!("seed {seed}: best {:.3}", best));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{} ({secs:.0}s)", lines.join(", "));
    if all_ok && secs < 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct SeedResult {
    few: [f64; 3],
    spearman: f64,
}

/// Full model, without global context and without memory, on the default dataset of one seed.
fn ablation_seed(seed: u64) -> Result<SeedResult, String> {
    let data = generate_dataset(&GeneratorConfig { seed, ..GeneratorConfig::default() }).map_err(|e| e.to_string())?;
    let variants = [(false, false), (true, false), (false, true)];
    let reports = variants
        .par_iter()
        .map(|&(g, m)| {
            let mut config = TrainConfig { seed, ..TrainConfig::default() };
            config.fit_dataset(&data.manifest);
            config.model.disable_global = g;
            config.model.disable_memory = m;
            let outcome = train(&config, &data)?;
            evaluate(&outcome.model, &data, "test", &[20])
        })
        .collect::<triplet_transformer::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let few = |i: usize| reports[i].relation.buckets.get(Bucket::Few).unwrap_or(0.0);
    Ok(SeedResult {
        few: [few(0), few(1), few(2)],
        spearman: reports[0].memory.as_ref().map_or(0.0, |m| m.spearman),
    })
}

fn trend_checks() -> (Outcome, Outcome) {
    let results: Vec<Result<SeedResult, String>> = (0..5).map(ablation_seed).collect();
    let results = match results.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let wins = results.iter().filter(|r| r.few[0] >= r.few[1] && r.few[0] >= r.few[2]).count();
    let table: Vec<String> = results
        .iter()
        .map(|r| format!("{:.2}/{:.2}/{:.2}", r.few[0], r.few[1], r.few[2]))
        .collect();
    let ablation = format!("full >= both ablations on few in {wins}/5 seeds (few full/-global/-memory: {})", table.join(" "));
    let positive = results.iter().filter(|r| r.spearman > 0.0).count();
    let rhos: Vec<String> = results.iter().map(|r| format!("{:+.2}", r.spearman)).collect();
    let memory = format!("positive rarity correlation in {positive}/5 seeds ({})", rhos.join(" "));
    (
        if wins >= 3 { Ok(ablation) } else { Err(ablation) },
        if positive >= 3 { Ok(memory) } else { Err(memory) },
    )
}

fn determinism() -> Outcome {
    let config = GeneratorConfig { scenes: 40, seed: 5, ..GeneratorConfig::default() };
    let bytes = |dir: &std::path::Path| -> Vec<Vec<u8>> {
        let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    write_dataset(a.path(), &generate_dataset(&config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    write_dataset(b.path(), &generate_dataset(&config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let same_bytes = bytes(a.path()) == bytes(b.path());
    let data = generate_dataset(&config).map_err(|e| e.to_string())?;
    let mut tc = TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() };
    tc.fit_dataset(&data.manifest);
    let l1 = train(&tc, &data).map_err(|e| e.to_string())?.final_loss().unwrap_or(f64::NAN);
    let l2 = train(&tc, &data).map_err(|e| e.to_string())?.final_loss().unwrap_or(f64::NAN);
    let detail = format!("dataset bytes identical: {same_bytes}; final losses differ by {:.1e}", (l1 - l2).abs());
    if same_bytes && (l1 - l2).abs() <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bucket_structure() -> Outcome {
    let mut sizes = Vec::new();
    for (classes, cutoffs, want) in [(310usize, (16, 46), [16, 46, 248]), (2000, (100, 300), [100, 300, 1600])] {
        let counts: Vec<usize> = (0..classes).map(|k| 1 + 100_000 / (k + 1)).collect();
        let b = bucket_classes(&counts, cutoffs).map_err(|e| e.to_string())?;
        let got = [b.size(Bucket::Many), b.size(Bucket::Medium), b.size(Bucket::Few)];
        if got != want {
            return Err(format!("{classes} classes: got {got:?}, want {want:?}"));
        }
        sizes.push(format!("{got:?} of {classes}"));
    }
    Ok(sizes.join(", "))
}

fn main() {
    let mut hard_failures = 0;
    let mut report = |name: &str, soft: bool, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => println!("FAIL {name}: {d}"),
        }
        if outcome.is_err() && !soft {
            hard_failures += 1;
        }
    };
    report("gradient verification", false, gradient_verification());
    report("permutation equivariance", false, permutation_equivariance());
    report("attention normalization", false, attention_normalization());
    report("gate properties", false, gate_properties());
    report("loss identities", false, loss_identities());
    report("metric oracle equivalence", false, metric_oracles());
    report("overfit smoke test", false, overfit_smoke());
    let (ablation, memory) = trend_checks();
    report("ablation direction", true, ablation);
    report("memory attention trend", true, memory);
    report("determinism", false, determinism());
    report("bucket structure", false, bucket_structure());
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
