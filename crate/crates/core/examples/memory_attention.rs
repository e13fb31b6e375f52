//! Trains a model and tabulates the mean memory weight of the relation token
//! per relation class, most frequent class first.
//!
//! cargo run --release --example memory_attention -- [seed] [epochs]

use triplet_transformer::data::{generate_dataset, GeneratorConfig};
use triplet_transformer::metrics::{memory_attention_report, memory_table};
use triplet_transformer::train::{train, TrainConfig};

fn main() -> triplet_transformer::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut config = TrainConfig { seed, ..TrainConfig::default() };
    config.epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(config.epochs);
    let data = generate_dataset(&GeneratorConfig { seed, ..GeneratorConfig::default() })?;
    config.fit_dataset(&data.manifest);

    let model = train(&config, &data)?.model;
    let m = &data.manifest;
    let report = memory_attention_report(&model, &data.test, &m.relation_buckets()?, &m.relation_counts)?;
    print!("{}", memory_table(&report));
    Ok(())
}
