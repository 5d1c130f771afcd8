//! Occlusion masks: the fixed center square and random free-form strokes.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary occlusion map, `[batch, 1, h, w]`; 1 marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(Tensor);

impl Mask {
    pub fn new(t: Tensor) -> Result<Self> {
        let [_, c, _, _] = t.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("mask needs 1 channel, got {c}")));
        }
        if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Mask(format!("mask value {v} is not binary")));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn coverage(&self) -> f64 {
        self.0.mean()
    }

    pub fn stack(items: &[Mask]) -> Result<Mask> {
        let ts: Vec<Tensor> = items.iter().map(|m| m.0.clone()).collect();
        Ok(Self(Tensor::stack_batch(&ts)?))
    }

    /// Loads a grayscale mask image; pixels above mid-gray are occluded.
    pub fn from_luma(img: &image::GrayImage) -> Result<Mask> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.pixels().map(|p| if p[0] > 127 { 1.0 } else { 0.0 }).collect();
        Mask::new(Tensor::new(&[1, 1, h, w], data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Center,
    FreeForm,
}

/// Parameters for mask generation. Lengths and widths are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub mode: MaskMode,
    pub center_size: usize,
    pub stroke_count: [usize; 2],
    pub stroke_width: [f64; 2],
    pub vertex_count: [usize; 2],
    pub segment_length: [f64; 2],
    pub max_turn_angle: f64,
    pub coverage: [f64; 2],
    pub seed: u64,
}

/// Attempts per mask before giving up on the coverage window.
pub const MAX_MASK_ATTEMPTS: usize = 500;

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            mode: MaskMode::FreeForm,
            center_size: 64,
            stroke_count: [1, 4],
            stroke_width: [12.0, 24.0],
            vertex_count: [4, 12],
            segment_length: [8.0, 24.0],
            max_turn_angle: 2.0 * PI / 5.0,
            coverage: [0.1, 0.4],
            seed: 0,
        }
    }
}

impl MaskSpec {
    /// Defaults with every pixel quantity scaled from a 128-pixel frame.
    pub fn for_resolution(resolution: usize) -> Self {
        let s = resolution as f64 / 128.0;
        let d = Self::default();
        Self {
            center_size: resolution / 2,
            stroke_width: d.stroke_width.map(|v| v * s),
            segment_length: d.segment_length.map(|v| v * s),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("mask.{what}")));
        if self.stroke_count[0] == 0 || self.stroke_count[0] > self.stroke_count[1] {
            return bad("stroke_count must be a non-empty range of positive counts");
        }
        if self.vertex_count[0] < 2 || self.vertex_count[0] > self.vertex_count[1] {
            return bad("vertex_count must be a non-empty range starting at >= 2");
        }
        if !(self.stroke_width[0] > 0.0 && self.stroke_width[0] <= self.stroke_width[1]) {
            return bad("stroke_width must be a non-empty positive range");
        }
        if !(self.segment_length[0] > 0.0 && self.segment_length[0] <= self.segment_length[1]) {
            return bad("segment_length must be a non-empty positive range");
        }
        if !(self.max_turn_angle >= 0.0 && self.max_turn_angle.is_finite()) {
            return bad("max_turn_angle must be finite and non-negative");
        }
        let [lo, hi] = self.coverage;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad("coverage must be a non-empty range inside (0, 1)");
        }
        if self.center_size == 0 || !self.center_size.is_multiple_of(2) {
            return bad("center_size must be positive and even");
        }
        Ok(())
    }
}

/// Ones on the centered `center_size`² square, zeros elsewhere.
pub fn center_mask(resolution: usize, center_size: usize) -> Result<Mask> {
    if center_size == 0 || center_size > resolution {
        return Err(Error::Mask(format!(
            "center size {center_size} must be in 1..={resolution}"
        )));
    }
    if !center_size.is_multiple_of(2) || !resolution.is_multiple_of(2) {
        return Err(Error::Mask(format!(
            "center size {center_size} and resolution {resolution} must both be even"
        )));
    }
    let lo = (resolution - center_size) / 2;
    let hi = lo + center_size;
    let t = Tensor::from_fn(&[1, 1, resolution, resolution], |i| {
        let (y, x) = (i / resolution, i % resolution);
        if (lo..hi).contains(&y) && (lo..hi).contains(&x) {
            1.0
        } else {
            0.0
        }
    });
    Mask::new(t)
}

/// Random polyline strokes with round caps, redrawn until the coverage lands
/// in `spec.coverage`.
pub fn free_form_mask(spec: &MaskSpec, resolution: usize) -> Result<Mask> {
    if spec.mode != MaskMode::FreeForm {
        return Err(Error::Mask("free_form_mask needs mode = free_form".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.coverage;
    let mut last = 0.0;
    for _ in 0..MAX_MASK_ATTEMPTS {
        let canvas = draw_strokes(spec, resolution, &mut rng);
        let coverage = canvas.iter().sum::<f64>() / canvas.len() as f64;
        if (lo..=hi).contains(&coverage) {
            return Mask::new(Tensor::new(&[1, 1, resolution, resolution], canvas)?);
        }
        last = coverage;
    }
    Err(Error::Mask(format!(
        "coverage window [{lo}, {hi}] not reached after {MAX_MASK_ATTEMPTS} attempts (last coverage {last:.4})"
    )))
}

/// Generates a mask according to `spec.mode`.
pub fn generate(spec: &MaskSpec, resolution: usize) -> Result<Mask> {
    match spec.mode {
        MaskMode::Center => center_mask(resolution, spec.center_size),
        MaskMode::FreeForm => free_form_mask(spec, resolution),
    }
}

fn draw_strokes(spec: &MaskSpec, res: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut canvas = vec![0.0; res * res];
    let size = res as f64;
    let strokes = rng.random_range(spec.stroke_count[0]..=spec.stroke_count[1]);
    for _ in 0..strokes {
        let vertices = rng.random_range(spec.vertex_count[0]..=spec.vertex_count[1]);
        let radius = 0.5 * uniform(rng, spec.stroke_width);
        let mut p = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let mut heading = rng.random_range(0.0..2.0 * PI);
        for _ in 1..vertices {
            heading += uniform(rng, [-spec.max_turn_angle, spec.max_turn_angle]);
            let len = uniform(rng, spec.segment_length);
            let q = (
                (p.0 + len * heading.cos()).clamp(0.0, size),
                (p.1 + len * heading.sin()).clamp(0.0, size),
            );
            stamp_capsule(&mut canvas, res, p, q, radius);
            p = q;
        }
    }
    canvas
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Sets every pixel whose center lies within `radius` of segment `a`–`b`.
fn stamp_capsule(canvas: &mut [f64], res: usize, a: (f64, f64), b: (f64, f64), radius: f64) {
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil() as usize).min(res);
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + radius).ceil() as usize).min(res);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if cx * cx + cy * cy <= r2 {
                canvas[y * res + x] = 1.0;
            }
        }
    }
}
