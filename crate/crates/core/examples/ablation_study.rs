//! Trains the full model and both ablations on the default long-tail dataset
//! and prints few-shot relation accuracy and the memory trend per seed.
//!
//! cargo run --release --example ablation_study -- [seeds] [epochs]

use std::time::Instant;

use rayon::prelude::*;
use triplet_transformer::data::{generate_dataset, GeneratorConfig};
use triplet_transformer::metrics::evaluate;
use triplet_transformer::model::ModelConfig;
use triplet_transformer::train::{train, TrainConfig};

fn main() -> triplet_transformer::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(TrainConfig::default().epochs);

    let variants = [("full", false, false), ("-global", true, false), ("-memory", false, true)];
    let start = Instant::now();
    let rows: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|seed| -> triplet_transformer::Result<_> {
            let data = generate_dataset(&GeneratorConfig { seed, ..GeneratorConfig::default() })?;
            let mut out = Vec::new();
            for (name, disable_global, disable_memory) in variants {
                let cfg = TrainConfig {
                    model: ModelConfig { disable_global, disable_memory, ..ModelConfig::default() },
                    epochs,
                    seed,
                    ..TrainConfig::default()
                };
                let trained = train(&cfg, &data)?;
                let report = evaluate(&trained.model, &data, "test", &[20])?;
                out.push((name, report));
            }
            Ok((seed, out))
        })
        .collect::<triplet_transformer::Result<_>>()?;

    println!("{:<6}{:<10}{:>8}{:>8}{:>8}{:>8}{:>10}", "seed", "model", "many", "medium", "few", "all", "spearman");
    let pct = |v: Option<f64>| v.map_or("-".into(), |v| format!("{:.1}", 100.0 * v));
    for (seed, out) in &rows {
        for (name, r) in out {
            let b = &r.relation.buckets;
            let rho = r.memory.as_ref().map_or("-".into(), |m| format!("{:.3}", m.spearman));
            println!("{:<6}{:<10}{:>8}{:>8}{:>8}{:>8}{:>10}", seed, name, pct(b.many), pct(b.medium), pct(b.few), pct(b.all), rho);
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
