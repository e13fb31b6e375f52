//! Joint training on the default synthetic dataset followed by the full
//! metrics table on the test split.
//!
//! cargo run --release --example train_and_evaluate -- [epochs] [loss]

use triplet_transformer::data::{generate_dataset, GeneratorConfig};
use triplet_transformer::head::LossMode;
use triplet_transformer::metrics::{evaluate, DEFAULT_RECALL_KS};
use triplet_transformer::train::{train_with_observer, TrainConfig};

fn main() -> triplet_transformer::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut config = TrainConfig::default();
    if let Some(e) = args.get(1) {
        config.epochs = e.parse().map_err(|_| triplet_transformer::Error::Config(format!("bad epoch count {e}")))?;
    }
    if let Some(l) = args.get(2) {
        config.loss.mode = l.parse::<LossMode>()?;
    }
    let data = generate_dataset(&GeneratorConfig::default())?;
    config.fit_dataset(&data.manifest);

    let outcome = train_with_observer(&config, &data, |epoch, model| {
        if (epoch + 1) % 10 == 0 {
            let val = evaluate(model, &data, "val", &[20])?;
            println!("epoch {:>3}: val relation accuracy {:.3}", epoch + 1, val.relation.buckets.all.unwrap_or(0.0));
        }
        Ok(())
    })?;
    println!("final training loss {:.4}\n", outcome.final_loss().unwrap_or(f64::NAN));
    print!("{}", evaluate(&outcome.model, &data, "test", &DEFAULT_RECALL_KS)?.to_table());
    Ok(())
}
