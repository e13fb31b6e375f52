//! Central-difference verification of every parameter gradient of a small
//! full model, for each loss.
//!
//! cargo run --release --example gradient_check

use triplet_transformer::head::{LossConfig, LossMode};
use triplet_transformer::model::{model_grad_check, GradCheckSetup};

fn main() -> triplet_transformer::Result<()> {
    for mode in [LossMode::Ce, LossMode::Wce, LossMode::Focal] {
        let setup = GradCheckSetup { loss: LossConfig { mode, ..LossConfig::default() }, ..GradCheckSetup::default() };
        let report = model_grad_check(&setup, 1e-5, 1e-5)?;
        let worst = report.worst.map_or("-".into(), |(name, i)| format!("{name}[{i}]"));
        println!(
            "{:<6} {} max_rel_err {:.2e} over {} entries, worst at {worst}",
            mode.to_string(),
            if report.max_rel_error < report.tol { "PASS" } else { "FAIL" },
            report.max_rel_error,
            report.entries_checked,
        );
    }
    Ok(())
}
