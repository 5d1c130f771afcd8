//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dam_inpaint::autograd::Graph;
use dam_inpaint::config::RunConfig;
use dam_inpaint::data::{apply_mask, ImageTensor};
use dam_inpaint::losses::{fakeness_targets, generator_loss_graph, LossWeights, LUMA};
use dam_inpaint::mask::{center_mask, Mask};
use dam_inpaint::model::{discriminator_graph, generator_graph, FakenessMap, ModelConfig, ParameterStore};
use dam_inpaint::synthetic::smooth_images;
use dam_inpaint::trainer::{Batch, Dataset};
use dam_inpaint::Tensor;

/// The 64-bit LCG shared with `tests/oracles/ssim_reference.py`.
pub fn lcg_values(seed: u64, count: usize) -> Vec<f64> {
    let mut s = seed;
    (0..count)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

pub fn lcg_image(seed: u64, res: usize) -> Vec<f64> {
    lcg_values(seed, 3 * res * res)
}

pub fn image(values: Vec<f64>, res: usize) -> ImageTensor {
    ImageTensor::new(Tensor::new(&[1, 3, res, res], values).unwrap()).unwrap()
}

/// scikit-image `structural_similarity` (Gaussian window, σ = 1.5,
/// population covariance, data range 1) on `(3, 32, 32)` LCG images:
/// pair `i` is `a = lcg(2i+1)` against `b = (a + lcg(2i+2)) / 2`.
pub const SSIM_ORACLE: [f64; 10] = [
    0.6657938494814807,
    0.6484983402146532,
    0.6429182350646746,
    0.6666655833417393,
    0.6568278459136774,
    0.6797506851425306,
    0.6609868630715112,
    0.6649584939727533,
    0.6523862618834135,
    0.6487056730431343,
];
/// `a = 0.4 + 0.2·lcg(99)` against `a + 0.1`.
pub const SSIM_ORACLE_SHIFT: f64 = 0.9836380657010154;
/// `a = lcg(100)` against `1 − a`.
pub const SSIM_ORACLE_INVERT: f64 = -0.9651906390146007;

/// Mean free-form coverage over seeds `0..1000` at the default mask spec,
/// measured once and kept as a regression target.
pub const FREE_FORM_MEAN_COVERAGE: f64 = 0.2258;

/// Scalar-loop `mean|a − b|`.
pub fn oracle_mean_abs(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

/// Scalar-loop PSNR with peak 1.
pub fn oracle_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let mse = s / a.len() as f64;
    if mse == 0.0 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

/// Scalar-loop fakeness target at scale `j` for a single `[3, r, r]` pair:
/// luma of the absolute difference, averaged over `2^j × 2^j` blocks.
pub fn oracle_fakeness(target: &[f64], output: &[f64], r: usize, j: usize) -> Vec<f64> {
    let f = 1 << j;
    let side = r / f;
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    let p = (y * f + dy) * r + (x * f + dx);
                    for c in 0..3 {
                        acc += LUMA[c] * (output[c * r * r + p] - target[c * r * r + p]).abs();
                    }
                }
            }
            out[y * side + x] = acc / (f * f) as f64;
        }
    }
    out
}

/// 16 smooth training images at the micro resolution.
pub fn overfit_dataset(resolution: usize) -> Dataset {
    Dataset {
        ids: (0..16).map(|i| format!("img_{i:04}.png")).collect(),
        images: smooth_images(16, resolution, 0),
    }
}

pub fn small_dataset(count: usize, resolution: usize, seed: u64) -> Dataset {
    Dataset {
        ids: (0..count).map(|i| format!("img_{i:04}.png")).collect(),
        images: smooth_images(count, resolution, seed),
    }
}

pub fn center_batch(cfg: &RunConfig, data: &Dataset) -> Batch {
    let res = cfg.model.resolution;
    let masks: Vec<Mask> = data
        .images
        .iter()
        .map(|_| center_mask(res, cfg.mask.center_size).unwrap())
        .collect();
    Batch::new(
        ImageTensor::stack(&data.images).unwrap(),
        Mask::stack(&masks).unwrap(),
        dam_inpaint::data::Fill::Zeros,
    )
    .unwrap()
}

/// Generator objective for fixed discriminator parameters and fixed
/// fakeness targets; returns the loss and, when asked, its gradient.
pub fn generator_objective(
    model: &ModelConfig,
    gen: &ParameterStore,
    disc: &ParameterStore,
    batch: &Batch,
    targets: &[FakenessMap],
    w: LossWeights,
    want_grad: bool,
) -> (f64, Vec<(String, Tensor)>) {
    let mut g = Graph::new();
    let pg = gen.bind(&mut g, want_grad);
    let pd = disc.bind(&mut g, false);
    let gv = generator_graph(&mut g, model, &pg, &batch.input.generator_input).unwrap();
    let score = discriminator_graph(&mut g, model, &pd, gv.final_image).unwrap();
    let lv = generator_loss_graph(
        &mut g,
        batch.target.tensor(),
        gv.coarse,
        gv.final_image,
        &gv.fakeness,
        targets,
        score,
        w,
    )
    .unwrap();
    let loss = g.value(lv.total).item();
    if !want_grad {
        return (loss, Vec::new());
    }
    let mut grads = g.backward(lv.total).unwrap();
    let out = pg
        .iter()
        .map(|(name, v)| (name.to_string(), grads.take(v).unwrap_or_else(|| Tensor::zeros(&[0]))))
        .collect();
    (loss, out)
}

/// Fakeness targets for the current generator output on `batch`.
pub fn frozen_targets(model: &ModelConfig, gen: &ParameterStore, batch: &Batch) -> Vec<FakenessMap> {
    let out = dam_inpaint::model::generator_forward(model, gen, &batch.input.generator_input).unwrap();
    fakeness_targets(&batch.target, &out.final_image).unwrap()
}

pub fn masked(image: &ImageTensor, mask: &Mask) -> ImageTensor {
    apply_mask(image, mask, dam_inpaint::data::Fill::Zeros).unwrap().masked
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dam-inpaint"))
}

pub fn run_cli(cwd: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(cwd).args(args).output().expect("binary runs")
}

/// Writes a micro config whose paths point into `dir`.
pub fn write_micro_config(dir: &Path, steps: u64) -> PathBuf {
    let mut cfg = RunConfig::micro();
    cfg.paths.data_root = dir.join("data");
    cfg.paths.manifest = dir.join("data/manifest.tsv");
    cfg.paths.output_dir = dir.join("run");
    cfg.train.steps = steps;
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}
