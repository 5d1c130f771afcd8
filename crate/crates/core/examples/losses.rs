//! Evaluates every loss term on a small synthetic example and prints the
//! per-scale fakeness targets.
//!
//! ```text
//! cargo run --example losses
//! ```

use dam_inpaint::data::{apply_mask, Fill, ImageTensor};
use dam_inpaint::losses::{
    adversarial_loss_d, adversarial_loss_g, dam_loss, fakeness_targets, reconstruction_loss, total_loss, LossParts,
    LossWeights,
};
use dam_inpaint::mask::center_mask;
use dam_inpaint::model::{build_discriminator, build_generator, discriminator_forward, generator_forward, ModelConfig};
use dam_inpaint::synthetic::smooth_images;

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::micro();
    let target = ImageTensor::stack(&smooth_images(2, cfg.resolution, 0))?;
    let mask = dam_inpaint::mask::Mask::stack(&[center_mask(cfg.resolution, 8)?, center_mask(cfg.resolution, 8)?])?;
    let input = apply_mask(&target, &mask, Fill::Zeros)?;

    let gen = build_generator(&cfg, 0)?;
    let disc = build_discriminator(&cfg, 1)?;
    let out = generator_forward(&cfg, &gen, &input.generator_input)?;
    let real = discriminator_forward(&cfg, &disc, &target)?;
    let fake = discriminator_forward(&cfg, &disc, &out.final_image)?;

    let parts = LossParts {
        l_re: reconstruction_loss(&target, &out.coarse, &out.final_image)?,
        l_adv_g: adversarial_loss_g(&fake),
        l_dam: dam_loss(&out.fakeness, &target, &out.final_image)?,
    };
    println!("L_re      {:.6}", parts.l_re);
    println!("L_adv(D)  {:.6}", adversarial_loss_d(&real, &fake));
    println!("L_adv(G)  {:.6}", parts.l_adv_g);
    println!("L_DAM     {:.6}", parts.l_dam);
    println!("total     {:.6}  (weights {:?})", total_loss(parts, LossWeights::default()), LossWeights::default());

    for t in fakeness_targets(&target, &out.final_image)? {
        println!("M_GT scale {} {:?}: mean {:.4}", t.scale, t.map.shape(), t.map.mean());
    }
    Ok(())
}
