//! PSNR / SSIM scoring and per-image report aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / MSE)` over all channels and pixels, capped at 99 dB.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Data(format!("psnr peak must be positive, got {peak}")));
    }
    let m = mse(a.tensor(), b.tensor())?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over the positions where the whole window fits.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * wo + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, win);
    let mu_b = filter_valid(b, h, w, win);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, win);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, win);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1), computed per channel and averaged over channels and
/// batch items.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.tensor().expect_same_shape(b.tensor())?;
    let [n, c, h, w] = a.tensor().dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let plane = h * w;
    let mut total = 0.0;
    for i in 0..n * c {
        let pa = &a.tensor().data()[i * plane..(i + 1) * plane];
        let pb = &b.tensor().data()[i * plane..(i + 1) * plane];
        total += ssim_plane(pa, pb, h, w, &win);
    }
    Ok(total / (n * c) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compositing {
    /// Score the generator output as is.
    Raw,
    /// Paste generated pixels into the hole, keep known pixels from the input.
    Composited,
}

impl fmt::Display for Compositing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compositing::Raw => "raw",
            Compositing::Composited => "composited",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskTag {
    Center,
    Free,
}

impl fmt::Display for MaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskTag::Center => "center",
            MaskTag::Free => "free",
        })
    }
}

/// `final ⊙ mask + known ⊙ (1 − mask)`
pub fn composite(final_image: &ImageTensor, known: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
    final_image.tensor().expect_same_shape(known.tensor())?;
    let [n, c, h, w] = final_image.tensor().dims4()?;
    if mask.tensor().shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {:?}",
            mask.tensor().shape(),
            final_image.tensor().shape()
        )));
    }
    let plane = h * w;
    let mut out = known.tensor().clone();
    for bi in 0..n {
        let m = &mask.tensor().data()[bi * plane..(bi + 1) * plane];
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            let src = &final_image.tensor().data()[off..off + plane];
            let dst = &mut out.data_mut()[off..off + plane];
            for ((d, &s), &mv) in dst.iter_mut().zip(src).zip(m) {
                if mv != 0.0 {
                    *d = s;
                }
            }
        }
    }
    ImageTensor::new(out)
}

/// Scores one output against its ground truth; returns `(psnr_db, ssim)`.
pub fn evaluate_pair(
    target: &ImageTensor,
    final_image: &ImageTensor,
    input_masked: &ImageTensor,
    mask: &Mask,
    compositing: Compositing,
) -> Result<(f64, f64)> {
    target.tensor().expect_same_shape(final_image.tensor())?;
    target.tensor().expect_same_shape(input_masked.tensor())?;
    let scored = match compositing {
        Compositing::Raw => {
            // still validate the mask against the batch
            composite(final_image, input_masked, mask)?;
            final_image.clone()
        }
        Compositing::Composited => composite(final_image, input_masked, mask)?,
    };
    Ok((psnr(&scored, target, 1.0)?, ssim(&scored, target)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Sorted by id.
    pub rows: Vec<MetricRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mask: MaskTag,
    pub compositing: Compositing,
}

/// Arithmetic means over `rows`, which are reordered by id.
pub fn aggregate(mut rows: Vec<MetricRow>, mask: MaskTag, compositing: Compositing) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Data("cannot aggregate an empty set of metric rows".into()));
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    Ok(MetricsReport {
        rows,
        mean_psnr,
        mean_ssim,
        mask,
        compositing,
    })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.id, fmt_sig6(r.psnr), fmt_sig6(r.ssim)));
        }
        out.push_str(&format!("mean,{},{}\n", fmt_sig6(self.mean_psnr), fmt_sig6(self.mean_ssim)));
        out
    }
}

/// Formats like C's `%g`: 6 significant digits, trailing zeros trimmed,
/// exponent notation outside `[1e-4, 1e6)`.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
