//! Generates center and free-form masks and reports coverage statistics.
//!
//! ```text
//! cargo run --example masks -- [resolution] [samples] [out_dir]
//! ```
//!
//! When `out_dir` is given, the first eight free-form masks are written there
//! as grayscale PNGs.

use std::path::PathBuf;

use dam_inpaint::mask::{center_mask, free_form_mask, MaskSpec};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let resolution: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(128);
    let samples: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let out_dir = args.get(2).map(PathBuf::from);

    let center = center_mask(resolution, resolution / 2)?;
    println!("center mask {resolution}px: coverage {:.4}", center.coverage());

    let base = MaskSpec::for_resolution(resolution);
    let mut coverages = Vec::with_capacity(samples as usize);
    for seed in 0..samples {
        let mask = free_form_mask(&MaskSpec { seed, ..base.clone() }, resolution)?;
        if let Some(dir) = &out_dir {
            if seed < 8 {
                std::fs::create_dir_all(dir)?;
                let img = image::GrayImage::from_fn(resolution as u32, resolution as u32, |x, y| {
                    let v = mask.tensor().data()[y as usize * resolution + x as usize];
                    image::Luma([(v * 255.0) as u8])
                });
                img.save(dir.join(format!("free_{seed:02}.png")))?;
            }
        }
        coverages.push(mask.coverage());
    }
    let mean = coverages.iter().sum::<f64>() / coverages.len() as f64;
    let min = coverages.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = coverages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "free-form {resolution}px over {samples} seeds: mean {mean:.4}, min {min:.4}, max {max:.4} (window {:?})",
        base.coverage
    );
    Ok(())
}
