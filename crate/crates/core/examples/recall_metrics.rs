//! Recall@K and mean recall@K on a hand-made scene, showing how one frequent
//! class can dominate recall while mean recall weights classes equally.
//!
//! cargo run --release --example recall_metrics

use triplet_transformer::metrics::{mean_recall_at_k, recall_at_k, SceneRelationScores};
use triplet_transformer::numerics::Tensor;

fn main() -> triplet_transformer::Result<()> {
    // four ground-truth pairs over three relation classes; class 0 is scored
    // highly everywhere, the rare class 2 never wins
    let scores = Tensor::from_rows(&[
        vec![0.9, 0.05, 0.05],
        vec![0.8, 0.1, 0.1],
        vec![0.7, 0.2, 0.1],
        vec![0.6, 0.3, 0.1],
    ])?;
    let scene = SceneRelationScores::new(scores, vec![0, 0, 1, 2])?;
    let scenes = [scene];
    println!("{:>3}{:>10}{:>10}  hits", "K", "R@K", "mR@K");
    for k in [1, 2, 4, 6, 8, 12] {
        let hits: String = scenes[0].hits(k).iter().map(|&h| if h { 'x' } else { '.' }).collect();
        println!("{k:>3}{:>10.3}{:>10.3}  {hits}", recall_at_k(&scenes, k)?, mean_recall_at_k(&scenes, k)?);
    }
    Ok(())
}
