//! Reconstruction, adversarial, and fakeness-map losses.
//!
//! All reductions are per-element means, so the loss weights do not depend
//! on resolution or batch size. Pixel values live in `[0, 1]`, which makes
//! the grayscale difference map a valid fakeness target without rescaling.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::model::{FakenessMap, DAM_LEVELS};
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-7;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_re: f64,
    pub lambda_adv: f64,
    pub lambda_dam: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_re: 1.0,
            lambda_adv: 0.001,
            lambda_dam: 0.005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_re", self.lambda_re),
            ("lambda_adv", self.lambda_adv),
            ("lambda_dam", self.lambda_dam),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("train.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_re: f64,
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_dam: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("l_re", self.l_re),
            ("l_adv_d", self.l_adv_d),
            ("l_adv_g", self.l_adv_g),
            ("l_dam", self.l_dam),
            ("l_total", self.l_total),
        ]
    }
}

fn mean_abs(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// `mean|x̂ − G_C(x)| + mean|x̂ − G(x)|`
pub fn reconstruction_loss(target: &ImageTensor, coarse: &ImageTensor, final_image: &ImageTensor) -> Result<f64> {
    Ok(mean_abs(target.tensor(), coarse.tensor())? + mean_abs(target.tensor(), final_image.tensor())?)
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Discriminator objective: `−mean log D(x̂) − mean log(1 − D(G(x)))`.
pub fn adversarial_loss_d(score_real: &[f64], score_fake: &[f64]) -> f64 {
    -mean(score_real.iter().map(|&s| clamp_prob(s).ln()))
        - mean(score_fake.iter().map(|&s| (1.0 - clamp_prob(s)).ln()))
}

/// Non-saturating generator objective: `−mean log D(G(x))`.
pub fn adversarial_loss_g(score_fake: &[f64]) -> f64 {
    -mean(score_fake.iter().map(|&s| clamp_prob(s).ln()))
}

/// `grayscale(|final − target|)` per pixel, `[b, 1, h, w]`.
///
/// With pixels in `[0, 1]` the result is already in `[0, 1]`.
pub fn ground_truth_fakeness(target: &Tensor, final_image: &Tensor) -> Result<Tensor> {
    target.expect_same_shape(final_image)?;
    let [n, c, h, w] = target.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("fakeness target needs RGB input, got {c} channels")));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for bi in 0..n {
        let dst = &mut out.data_mut()[bi * plane..(bi + 1) * plane];
        for (ci, &k) in LUMA.iter().enumerate() {
            let off = (bi * 3 + ci) * plane;
            let a = &target.data()[off..off + plane];
            let b = &final_image.data()[off..off + plane];
            for p in 0..plane {
                dst[p] += k * (b[p] - a[p]).abs();
            }
        }
    }
    Ok(out)
}

/// Fakeness targets for every decoder scale.
///
/// The grayscale difference is formed at full resolution and then area
/// averaged down to each scale.
pub fn fakeness_targets(target: &ImageTensor, final_image: &ImageTensor) -> Result<Vec<FakenessMap>> {
    let full = ground_truth_fakeness(target.tensor(), final_image.tensor())?;
    (0..DAM_LEVELS)
        .map(|j| {
            Ok(FakenessMap {
                scale: j,
                map: full.area_downsample(1 << j)?,
            })
        })
        .collect()
}

/// `Σ_j mean|M_j − M_GT_j|` over the four decoder scales.
pub fn dam_loss(pred: &[FakenessMap], target: &ImageTensor, final_image: &ImageTensor) -> Result<f64> {
    if pred.len() != DAM_LEVELS {
        return Err(Error::Shape(format!(
            "expected {DAM_LEVELS} fakeness maps, got {}",
            pred.len()
        )));
    }
    let gts = fakeness_targets(target, final_image)?;
    pred.iter()
        .zip(&gts)
        .map(|(p, gt)| mean_abs(&p.map, &gt.map))
        .sum()
}

/// Inputs to [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub l_re: f64,
    pub l_adv_g: f64,
    pub l_dam: f64,
}

/// `λ_re·L_re + λ_adv·L_adv + λ_DAM·L_DAM` (generator side).
pub fn total_loss(parts: LossParts, w: LossWeights) -> f64 {
    w.lambda_re * parts.l_re + w.lambda_adv * parts.l_adv_g + w.lambda_dam * parts.l_dam
}

/// Recorded generator-side loss terms.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossVars {
    pub l_re: Var,
    pub l_adv_g: Var,
    pub l_dam: Var,
    pub total: Var,
}

/// Records `L_re`, `L_adv` (generator side), `L_DAM`, and their weighted sum.
///
/// `fakeness_targets` are constants; no gradient flows through them.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_graph(
    g: &mut Graph,
    target: &Tensor,
    coarse: Var,
    final_image: Var,
    fakeness: &[Var; DAM_LEVELS],
    fakeness_targets: &[FakenessMap],
    score_fake: Var,
    w: LossWeights,
) -> Result<GeneratorLossVars> {
    let re_c = g.mean_abs_diff(coarse, target.clone())?;
    let re_f = g.mean_abs_diff(final_image, target.clone())?;
    let l_re = g.weighted_sum(&[(re_c, 1.0), (re_f, 1.0)])?;
    let l_adv_g = g.neg_mean_log(score_fake, false, LOG_EPS);
    let mut dam_terms = Vec::with_capacity(DAM_LEVELS);
    for (m, gt) in fakeness.iter().zip(fakeness_targets) {
        dam_terms.push((g.mean_abs_diff(*m, gt.map.clone())?, 1.0));
    }
    let l_dam = g.weighted_sum(&dam_terms)?;
    let total = g.weighted_sum(&[(l_re, w.lambda_re), (l_adv_g, w.lambda_adv), (l_dam, w.lambda_dam)])?;
    Ok(GeneratorLossVars {
        l_re,
        l_adv_g,
        l_dam,
        total,
    })
}

/// Records the discriminator objective.
pub fn discriminator_loss_graph(g: &mut Graph, score_real: Var, score_fake: Var) -> Result<Var> {
    let real = g.neg_mean_log(score_real, false, LOG_EPS);
    let fake = g.neg_mean_log(score_fake, true, LOG_EPS);
    g.weighted_sum(&[(real, 1.0), (fake, 1.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn img(t: Tensor) -> ImageTensor {
        ImageTensor::new(t).unwrap()
    }

    fn random_img(shape: &[usize], rng: &mut ChaCha8Rng) -> ImageTensor {
        img(Tensor::from_fn(shape, |_| rng.random_range(0.0..=1.0)))
    }

    #[test]
    fn reconstruction_examples() {
        let x = ImageTensor::filled(1, 4, 1.0);
        assert_eq!(reconstruction_loss(&x, &x, &x).unwrap(), 0.0);
        let half = ImageTensor::filled(1, 4, 0.5);
        assert_eq!(reconstruction_loss(&x, &half, &x).unwrap(), 0.5);
        assert!(reconstruction_loss(&x, &ImageTensor::filled(1, 8, 0.5), &x).is_err());
    }

    #[test]
    fn reconstruction_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_img(&[2, 3, 4, 4], &mut rng);
        let b = random_img(&[2, 3, 4, 4], &mut rng);
        let c = random_img(&[2, 3, 4, 4], &mut rng);
        // swapping prediction/target for both terms
        let ab = mean_abs(a.tensor(), b.tensor()).unwrap();
        let ba = mean_abs(b.tensor(), a.tensor()).unwrap();
        assert_eq!(ab, ba);
        assert!(reconstruction_loss(&a, &b, &c).unwrap() >= 0.0);
    }

    #[test]
    fn discriminator_loss_examples() {
        let e = LOG_EPS;
        assert!(adversarial_loss_d(&[1.0 - e; 3], &[e; 3]) < 1e-6);
        assert!((adversarial_loss_d(&[0.5; 4], &[0.5; 4]) - 2.0 * LN2).abs() < 1e-12);
        assert!((adversarial_loss_d(&[0.5, 1.0 - e], &[0.5, e]) - LN2).abs() < 1e-6);
    }

    #[test]
    fn generator_adversarial_examples() {
        let e = LOG_EPS;
        assert!(adversarial_loss_g(&[1.0 - e; 2]) < 1e-6);
        assert!((adversarial_loss_g(&[0.5; 2]) - LN2).abs() < 1e-12);
        assert!((adversarial_loss_g(&[e]) - 16.118_095_650_958_32).abs() < 1e-9);
        // values outside the clamp behave like the clamp boundary
        assert_eq!(adversarial_loss_g(&[0.0]), adversarial_loss_g(&[e]));
    }

    #[test]
    fn fakeness_target_examples() {
        let a = ImageTensor::filled(1, 4, 1.0);
        let b = ImageTensor::filled(1, 4, 0.0);
        let same = ground_truth_fakeness(a.tensor(), a.tensor()).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));
        let ones = ground_truth_fakeness(a.tensor(), b.tensor()).unwrap();
        assert!(ones.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let mut c = a.tensor().clone();
        c.data_mut()[5] -= 0.5; // red channel, pixel (1, 1)
        let m = ground_truth_fakeness(a.tensor(), &c).unwrap();
        assert!((m.data()[5] - 0.1495).abs() < 1e-15);
        assert_eq!(m.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn fakeness_targets_cover_four_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_img(&[2, 3, 16, 16], &mut rng);
        let b = random_img(&[2, 3, 16, 16], &mut rng);
        let gts = fakeness_targets(&a, &b).unwrap();
        let sides: Vec<usize> = gts.iter().map(|m| m.map.shape()[2]).collect();
        assert_eq!(sides, vec![16, 8, 4, 2]);
        for m in &gts {
            assert!(m.map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn dam_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // keep the difference small so targets stay below 0.9
        let a = random_img(&[1, 3, 16, 16], &mut rng);
        let b = img(a.tensor().map(|v| (v + 0.3).min(1.0)));
        let gts = fakeness_targets(&a, &b).unwrap();
        assert_eq!(dam_loss(&gts, &a, &b).unwrap(), 0.0);
        let shifted: Vec<FakenessMap> = gts
            .iter()
            .map(|m| FakenessMap {
                scale: m.scale,
                map: m.map.map(|v| v + 0.1),
            })
            .collect();
        assert!((dam_loss(&shifted, &a, &b).unwrap() - 0.4).abs() < 1e-12);
        assert!(dam_loss(&shifted[..3], &a, &b).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        let zero = LossParts { l_re: 0.0, l_adv_g: 0.0, l_dam: 0.0 };
        assert_eq!(total_loss(zero, w), 0.0);
        let unit = LossParts { l_re: 1.0, l_adv_g: 1.0, l_dam: 1.0 };
        assert!((total_loss(unit, w) - 1.006).abs() < 1e-12);
        let doubled = LossWeights {
            lambda_re: 2.0 * w.lambda_re,
            lambda_adv: 2.0 * w.lambda_adv,
            lambda_dam: 2.0 * w.lambda_dam,
        };
        let parts = LossParts { l_re: 0.3, l_adv_g: 2.5, l_dam: 0.7 };
        assert!((total_loss(parts, doubled) - 2.0 * total_loss(parts, w)).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights { lambda_adv: -1.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }

    #[test]
    fn graph_losses_agree_with_tensor_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_img(&[2, 3, 16, 16], &mut rng);
        let c = random_img(&[2, 3, 16, 16], &mut rng);
        let f = random_img(&[2, 3, 16, 16], &mut rng);
        let maps: Vec<FakenessMap> = (0..4)
            .map(|j| FakenessMap {
                scale: j,
                map: Tensor::from_fn(&[2, 1, 16 >> j, 16 >> j], |_| rng.random_range(0.0..1.0)),
            })
            .collect();
        let scores = [0.3, 0.8];
        let w = LossWeights::default();

        let mut g = Graph::new();
        let cv = g.constant(c.tensor().clone());
        let fv = g.constant(f.tensor().clone());
        let mv: [Var; 4] = std::array::from_fn(|j| g.constant(maps[j].map.clone()));
        let sv = g.constant(Tensor::new(&[2, 1, 1, 1], scores.to_vec()).unwrap());
        let gts = fakeness_targets(&x, &f).unwrap();
        let v = generator_loss_graph(&mut g, x.tensor(), cv, fv, &mv, &gts, sv, w).unwrap();

        let l_re = reconstruction_loss(&x, &c, &f).unwrap();
        let l_dam = dam_loss(&maps, &x, &f).unwrap();
        let l_adv = adversarial_loss_g(&scores);
        assert!((g.value(v.l_re).item() - l_re).abs() < 1e-12);
        assert!((g.value(v.l_dam).item() - l_dam).abs() < 1e-12);
        assert!((g.value(v.l_adv_g).item() - l_adv).abs() < 1e-12);
        let total = total_loss(LossParts { l_re, l_adv_g: l_adv, l_dam }, w);
        assert!((g.value(v.total).item() - total).abs() < 1e-12);

        let real = g.constant(Tensor::new(&[2, 1, 1, 1], vec![0.9, 0.6]).unwrap());
        let d = discriminator_loss_graph(&mut g, real, sv).unwrap();
        assert!((g.value(d).item() - adversarial_loss_d(&[0.9, 0.6], &scores)).abs() < 1e-12);
    }
}
