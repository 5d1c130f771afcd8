//! Runs one DAM block on random features and shows how the predicted
//! fakeness map reweights the fused feature: `out = (1 + M) ⊗ F`.
//!
//! ```text
//! cargo run --example dam_block
//! ```

use dam_inpaint::model::{build_generator, dam_block_forward, ModelConfig};
use dam_inpaint::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::micro();
    let params = build_generator(&cfg, 0)?;
    // block 3 sits at the coarsest scale; read its input widths off the fuse kernel
    let fuse = params.get("dam.block3.fuse.w").expect("block exists");
    let (cout, cin) = (fuse.shape()[0], fuse.shape()[1]);
    let side = cfg.fakeness_side(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |c: usize| Tensor::from_fn(&[1, c, side, side], |_| rng.random_range(-1.0..1.0));
    let (decoder, skip) = (rand(cin / 2), rand(cin - cin / 2));

    let (out, m) = dam_block_forward(&params, "dam.block3", &decoder, &skip)?;
    println!("decoder {:?} + skip {:?} -> out {:?}, fakeness {:?}", decoder.shape(), skip.shape(), out.shape(), m.map.shape());
    println!("fused width {cout} at scale j = {} ({side}x{side})", m.scale);
    let d = m.map.data();
    let (lo, hi) = d.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("fakeness range [{lo:.4}, {hi:.4}], mean {:.4}", m.map.mean());
    println!("pixels weighted up by more than 50%: {}", d.iter().filter(|&&v| v > 0.5).count());
    Ok(())
}
