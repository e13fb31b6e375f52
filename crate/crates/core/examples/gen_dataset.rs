//! Generates a synthetic long-tail dataset, writes it to a directory and
//! prints the relation frequency buckets.
//!
//! cargo run --release --example gen_dataset -- [out_dir] [seed]

use std::path::PathBuf;

use triplet_transformer::data::{generate_dataset, write_dataset, Bucket, GeneratorConfig};

fn main() -> triplet_transformer::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map_or("synthetic-data", String::as_str));
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = generate_dataset(&GeneratorConfig { seed, ..GeneratorConfig::default() })?;
    write_dataset(&out, &data)?;
    let m = &data.manifest;
    println!("wrote {} ({} train / {} val / {} test scenes)", out.display(), data.train.len(), data.val.len(), data.test.len());

    let buckets = m.relation_buckets()?;
    for bucket in Bucket::ALL {
        let classes: Vec<String> = buckets
            .frequency_order
            .iter()
            .filter(|&&c| buckets.of(c) == bucket)
            .map(|&c| format!("{c}:{}", m.relation_counts[c]))
            .collect();
        println!("{:>6}: {}", bucket.to_string(), classes.join(" "));
    }
    Ok(())
}
