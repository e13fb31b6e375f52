//! Multi-head self-attention and a full encoder layer on a toy sequence,
//! with and without a key padding mask.
//!
//! cargo run --release --example attention_basics

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use triplet_transformer::attention::{encoder_layer, multi_head_attention, AttentionMask, AttentionParams, EncoderLayerParams};
use triplet_transformer::numerics::{ParamInit, ParamSet, Tape, Tensor};

fn show(name: &str, t: &Tensor) {
    println!("{name} ({}x{}):", t.rows(), t.cols());
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> triplet_transformer::Result<()> {
    let (h, heads, n) = (8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    let (attn, layer) = {
        let mut init = ParamInit::new(&mut params, &mut rng);
        (
            AttentionParams::init(&mut init, "attn", h, heads, true)?,
            EncoderLayerParams::init(&mut init, "layer", h, heads)?,
        )
    };
    let x = Tensor::randn(&[n, h], 1.0, &mut rng);

    let mut tape = Tape::with_params(&params);
    let xv = tape.constant(x);
    multi_head_attention(&mut tape, xv, xv, xv, &attn, None)?;
    // the last row is padding: nothing may attend to it
    let mask = AttentionMask::key_padding(n, &[true, true, true, false])?;
    multi_head_attention(&mut tape, xv, xv, xv, &attn, Some(&mask))?;
    let out = encoder_layer(&mut tape, xv, &layer, Some(&mask))?;

    for (i, (w, m)) in tape.attention_maps().enumerate() {
        let tag = if m.is_some() { "masked" } else { "unmasked" };
        show(&format!("attention map {i}, {tag}"), w);
    }
    show("encoder layer output", tape.value(out));
    Ok(())
}
