//! Procedural images for smoke tests, examples, and demos: smooth colour
//! gradients plus a few soft blobs, so holes are predictable from context.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{save_png, ImageTensor};
use crate::error::Result;
use crate::tensor::Tensor;

/// A deterministic smooth RGB image, `[1, 3, res, res]`.
pub fn smooth_image(resolution: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = [[0.0f64; 3]; 3];
    for row in &mut base {
        for v in row.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
    }
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.15..0.35),
                [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            )
        })
        .collect();
    let r = resolution as f64;
    let plane = resolution * resolution;
    let t = Tensor::from_fn(&[1, 3, resolution, resolution], |k| {
        let (c, p) = (k / plane, k % plane);
        let y = ((p / resolution) as f64 + 0.5) / r;
        let x = ((p % resolution) as f64 + 0.5) / r;
        let mut v = base[0][c] * (1.0 - x) * (1.0 - y) + base[1][c] * x + base[2][c] * y * (1.0 - x);
        for (bx, by, s, amp) in &blobs {
            let d2 = (x - bx).powi(2) + (y - by).powi(2);
            v += amp[c] * (-d2 / (2.0 * s * s)).exp();
        }
        v.clamp(0.0, 1.0)
    });
    ImageTensor::new(t).expect("values are clamped to [0, 1]")
}

/// `count` smooth images with seeds `seed..seed + count`.
pub fn smooth_images(count: usize, resolution: usize, seed: u64) -> Vec<ImageTensor> {
    (0..count as u64).map(|i| smooth_image(resolution, seed + i)).collect()
}

/// Writes `count` PNGs named `img_NNNN.png` into `dir`.
pub fn write_dataset(dir: &Path, count: usize, resolution: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    smooth_images(count, resolution, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("img_{i:04}.png"));
            save_png(img, 0, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(smooth_image(16, 3).tensor(), smooth_image(16, 3).tensor());
        assert_ne!(smooth_image(16, 3).tensor(), smooth_image(16, 4).tensor());
    }
}
