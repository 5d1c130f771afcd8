//! Fills a free-form hole in a synthetic image and writes the masked input,
//! the raw generator output and the composited result as PNGs.
//!
//! ```text
//! cargo run --example inpaint -- [checkpoint] [out_dir]
//! ```
//!
//! Without a checkpoint an untrained micro model is used, which shows the
//! data flow but not meaningful content.

use std::path::PathBuf;

use dam_inpaint::checkpoint;
use dam_inpaint::config::RunConfig;
use dam_inpaint::data::{apply_mask, save_png};
use dam_inpaint::metrics::{composite, psnr, MaskTag};
use dam_inpaint::model::generator_forward;
use dam_inpaint::synthetic::smooth_image;
use dam_inpaint::trainer::{eval_mask, TrainState};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let state = match args.first().filter(|a| *a != "-") {
        Some(path) => checkpoint::load(path.as_ref())?,
        None => TrainState::new(RunConfig::micro())?,
    };
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dam_inpaint"));
    let cfg = &state.config;

    let image = smooth_image(cfg.model.resolution, 7);
    let mask = eval_mask(cfg, "example", MaskTag::Free)?;
    let input = apply_mask(&image, &mask, state.fill)?;
    let result = generator_forward(&cfg.model, &state.generator, &input.generator_input)?;
    let composited = composite(&result.final_image, &input.masked, &mask)?;

    std::fs::create_dir_all(&out)?;
    for (name, img) in [("masked", &input.masked), ("raw", &result.final_image), ("composited", &composited)] {
        save_png(img, 0, &out.join(format!("{name}.png")))?;
    }
    println!("hole covers {:.1}% of the image", 100.0 * mask.coverage());
    println!("psnr raw {:.3} dB, composited {:.3} dB", psnr(&result.final_image, &image, 1.0)?, psnr(&composited, &image, 1.0)?);
    println!("wrote masked.png, raw.png, composited.png to {}", out.display());
    Ok(())
}
