//! Scores noisy copies of an image with PSNR and SSIM, and prints a metrics
//! report in the CSV format used by evaluation.
//!
//! ```text
//! cargo run --example metrics
//! ```

use dam_inpaint::data::ImageTensor;
use dam_inpaint::metrics::{aggregate, psnr, ssim, Compositing, MaskTag, MetricRow};
use dam_inpaint::synthetic::smooth_image;
use dam_inpaint::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let clean = smooth_image(64, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rows = Vec::new();
    for amp in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let src = clean.tensor();
        let noisy = Tensor::from_fn(src.shape(), |i| (src.data()[i] + amp * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0));
        let noisy = ImageTensor::new(noisy)?;
        let (p, s) = (psnr(&noisy, &clean, 1.0)?, ssim(&noisy, &clean)?);
        println!("noise ±{amp:<5} psnr {p:7.3} dB  ssim {s:.4}");
        rows.push(MetricRow { id: format!("noise_{amp}"), psnr: p, ssim: s });
    }
    print!("{}", aggregate(rows, MaskTag::Center, Compositing::Raw)?.to_csv());
    Ok(())
}
