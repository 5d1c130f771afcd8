//! Two-stage generator (coarse network, then a U-Net decoder with dynamic
//! attention map blocks) and the global discriminator.
//!
//! Scale index `j` of a fakeness map counts from the finest level: `j = 0`
//! has the output resolution, `j = 3` is `resolution / 8`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Graph, Var};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Number of decoder levels carrying a DAM block.
pub const DAM_LEVELS: usize = 4;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    None,
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub resolution: usize,
    pub coarse_levels: usize,
    pub dam_levels: usize,
    pub base_width: usize,
    /// Channel widths double per level up to `width_cap * base_width`.
    pub width_cap: usize,
    pub dilation_rates: Vec<usize>,
    pub norm: Norm,
    pub leaky_slope: f64,
    pub disc_base_width: usize,
    pub disc_max_width: usize,
    pub disc_max_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            coarse_levels: 3,
            dam_levels: DAM_LEVELS,
            base_width: 48,
            width_cap: 8,
            dilation_rates: vec![2, 4, 8],
            norm: Norm::Instance,
            leaky_slope: 0.2,
            disc_base_width: 64,
            disc_max_width: 512,
            disc_max_layers: 5,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for tests and CPU smoke runs.
    pub fn micro() -> Self {
        Self {
            resolution: 16,
            base_width: 4,
            disc_base_width: 8,
            disc_max_width: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dam_levels != DAM_LEVELS {
            return fail(format!("model.dam_levels must be {DAM_LEVELS}, got {}", self.dam_levels));
        }
        if self.coarse_levels == 0 {
            return fail("model.coarse_levels must be positive".into());
        }
        let factor = 1usize << self.dam_levels.max(self.coarse_levels);
        if self.resolution == 0 || !self.resolution.is_multiple_of(factor) {
            return fail(format!(
                "model.resolution {} is not divisible by {factor}",
                self.resolution
            ));
        }
        if self.base_width == 0 || self.width_cap == 0 {
            return fail("model.base_width and model.width_cap must be positive".into());
        }
        if self.dilation_rates.contains(&0) {
            return fail("model.dilation_rates must be positive".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("model.leaky_slope {} not in [0, 1)", self.leaky_slope));
        }
        if self.disc_base_width == 0 || self.disc_max_width == 0 || self.disc_max_layers == 0 {
            return fail("model.disc_* widths and layer count must be positive".into());
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        (self.base_width << level).min(self.base_width * self.width_cap)
    }

    /// Side length of fakeness map `j`.
    pub fn fakeness_side(&self, j: usize) -> usize {
        self.resolution >> j
    }

    /// Stride-2 layers of the discriminator and the final spatial side.
    fn disc_layout(&self) -> (usize, usize) {
        let mut side = self.resolution;
        let mut layers = 0;
        while layers < self.disc_max_layers && side > 4 && side.is_multiple_of(2) {
            side /= 2;
            layers += 1;
        }
        (layers, side)
    }

    fn disc_width(&self, layer: usize) -> usize {
        (self.disc_base_width << layer).min(self.disc_max_width)
    }
}

/// Named learnable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    pub init: String,
}

/// Graph handles for every parameter of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl ParameterStore {
    pub fn from_map(params: BTreeMap<String, Tensor>, init: impl Into<String>) -> Self {
        Self {
            params,
            init: init.into(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    fn init(specs: &[ConvSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        // specs are in architecture order; draw in that order so names don't
        // influence the stream.
        for s in specs {
            let fan_in = (s.cin * s.k * s.k) as f64;
            let normal = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("positive std");
            let mut w = Tensor::from_fn(&[s.cout, s.cin, s.k, s.k], |_| normal.sample(&mut rng));
            // checkpoints store f32; keep the live values representable
            w.round_to_f32();
            params.insert(format!("{}.w", s.name), w);
            params.insert(format!("{}.b", s.name), Tensor::zeros(&[s.cout]));
        }
        Self {
            params,
            init: format!("lecun_normal(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone)]
struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
}

fn spec(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> ConvSpec {
    ConvSpec {
        name: name.into(),
        cin,
        cout,
        k,
    }
}

fn generator_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let mut s = Vec::new();
    // coarse network
    s.push(spec("coarse.stem", 4, cfg.width(0), 3));
    for l in 1..=cfg.coarse_levels {
        let (cin, cout) = (cfg.width(l - 1), cfg.width(l));
        s.push(spec(format!("coarse.down{l}"), cin, cout, 3));
        s.push(spec(format!("coarse.down{l}.res_a"), cout, cout, 3));
        s.push(spec(format!("coarse.down{l}.res_b"), cout, cout, 3));
    }
    let deep = cfg.width(cfg.coarse_levels);
    for (i, _) in cfg.dilation_rates.iter().enumerate() {
        s.push(spec(format!("coarse.dilated{i}"), deep, deep, 3));
    }
    for l in (1..=cfg.coarse_levels).rev() {
        s.push(spec(format!("coarse.up{l}"), cfg.width(l), cfg.width(l - 1), 3));
    }
    s.push(spec("coarse.out", cfg.width(0), 3, 3));

    // refinement network
    s.push(spec("dam.stem", 4, cfg.width(0), 3));
    for l in 1..=cfg.dam_levels {
        let (cin, cout) = (cfg.width(l - 1), cfg.width(l));
        s.push(spec(format!("dam.down{l}"), cin, cout, 3));
        s.push(spec(format!("dam.down{l}.res_a"), cout, cout, 3));
        s.push(spec(format!("dam.down{l}.res_b"), cout, cout, 3));
    }
    for j in (0..cfg.dam_levels).rev() {
        let c = cfg.width(j);
        s.push(spec(format!("dam.up{j}"), cfg.width(j + 1), c, 3));
        s.push(spec(format!("dam.block{j}.fuse"), 2 * c, c, 1));
        s.push(spec(format!("dam.block{j}.fake"), c, 1, 1));
    }
    s.push(spec("dam.out", cfg.width(0), 3, 3));
    s
}

fn discriminator_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let (layers, side) = cfg.disc_layout();
    let mut s = Vec::new();
    let mut cin = 3;
    for k in 0..layers {
        let cout = cfg.disc_width(k);
        s.push(spec(format!("disc.conv{k}"), cin, cout, 3));
        cin = cout;
    }
    s.push(spec("disc.fc", cin, 1, side));
    s
}

/// Initializes every generator parameter (both stages).
pub fn build_generator(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    Ok(ParameterStore::init(&generator_specs(cfg), seed))
}

pub fn build_discriminator(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    Ok(ParameterStore::init(&discriminator_specs(cfg), seed))
}

/// Single-channel per-scale fakeness prediction with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FakenessMap {
    pub scale: usize,
    pub map: Tensor,
}

#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub coarse: ImageTensor,
    pub final_image: ImageTensor,
    /// Ordered `j = 0..4`, finest first.
    pub fakeness: Vec<FakenessMap>,
}

/// Graph handles for one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars {
    pub coarse: Var,
    pub final_image: Var,
    pub fakeness: [Var; DAM_LEVELS],
}

/// Outputs of one DAM block.
#[derive(Debug, Clone, Copy)]
pub struct DamBlockVars {
    /// `F_i`, the fused decoder/skip feature.
    pub fused: Var,
    /// `M_i`, the predicted fakeness map.
    pub fakeness: Var,
    /// `(1 + M_i) ⊗ F_i`.
    pub out: Var,
}

/// `F ⊕ (M ⊗ F)` with the single-channel `M` broadcast over channels.
pub fn reweight(g: &mut Graph, fused: Var, fakeness: Var) -> Result<Var> {
    let weighted = g.mul_channel_broadcast(fused, fakeness)?;
    g.add(fused, weighted)
}

/// Parameters of a single DAM block.
#[derive(Debug, Clone, Copy)]
pub struct DamBlockParams {
    pub fuse_w: Var,
    pub fuse_b: Var,
    pub fake_w: Var,
    pub fake_b: Var,
}

/// DAM block: fuse `[T, S]` with a 1×1 conv, predict `M = σ(conv1×1(F))`,
/// and return `(1 + M) ⊗ F`.
pub fn dam_block(g: &mut Graph, p: DamBlockParams, decoder: Var, skip: Var) -> Result<DamBlockVars> {
    let (td, sd) = (g.value(decoder).dims4()?, g.value(skip).dims4()?);
    if (td[0], td[2], td[3]) != (sd[0], sd[2], sd[3]) {
        return Err(Error::Shape(format!(
            "DAM block inputs disagree: decoder {td:?} vs skip {sd:?}"
        )));
    }
    let cat = g.concat_channels(&[decoder, skip])?;
    let fused = g.conv2d(cat, p.fuse_w, Some(p.fuse_b), ConvGeom::UNIT)?;
    let logits = g.conv2d(fused, p.fake_w, Some(p.fake_b), ConvGeom::UNIT)?;
    let fakeness = g.sigmoid(logits);
    let out = reweight(g, fused, fakeness)?;
    Ok(DamBlockVars { fused, fakeness, out })
}

/// Tensor-level DAM block for inspection and tests.
pub fn dam_block_forward(
    block: &ParameterStore,
    prefix: &str,
    decoder: &Tensor,
    skip: &Tensor,
) -> Result<(Tensor, FakenessMap)> {
    let mut g = Graph::new();
    let bound = block.bind(&mut g, false);
    let p = DamBlockParams {
        fuse_w: bound.var(&format!("{prefix}.fuse.w"))?,
        fuse_b: bound.var(&format!("{prefix}.fuse.b"))?,
        fake_w: bound.var(&format!("{prefix}.fake.w"))?,
        fake_b: bound.var(&format!("{prefix}.fake.b"))?,
    };
    let t = g.constant(decoder.clone());
    let s = g.constant(skip.clone());
    let v = dam_block(&mut g, p, t, s)?;
    // generator block prefixes end in their scale index ("dam.block2"); others report 0
    let scale = prefix.rsplit("block").next().and_then(|j| j.parse().ok()).unwrap_or(0);
    Ok((
        g.value(v.out).clone(),
        FakenessMap {
            scale,
            map: g.value(v.fakeness).clone(),
        },
    ))
}

struct Net<'a> {
    g: &'a mut Graph,
    p: &'a Bound,
    cfg: &'a ModelConfig,
}

impl Net<'_> {
    fn conv(&mut self, name: &str, x: Var, geom: ConvGeom) -> Result<Var> {
        let w = self.p.var(&format!("{name}.w"))?;
        let b = self.p.var(&format!("{name}.b"))?;
        self.g.conv2d(x, w, Some(b), geom)
    }

    fn norm(&mut self, x: Var) -> Result<Var> {
        match self.cfg.norm {
            Norm::None => Ok(x),
            Norm::Instance => self.g.instance_norm(x, NORM_EPS),
        }
    }

    fn act(&mut self, x: Var) -> Var {
        self.g.leaky_relu(x, self.cfg.leaky_slope)
    }

    fn conv_norm_act(&mut self, name: &str, x: Var, geom: ConvGeom) -> Result<Var> {
        let y = self.conv(name, x, geom)?;
        let y = self.norm(y)?;
        Ok(self.act(y))
    }

    /// Unnormalized: instance norm here would discard each image's absolute
    /// colour, which the full-resolution skip must carry to the output.
    fn stem(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.conv(name, x, ConvGeom::same(3, 1))?;
        Ok(self.act(y))
    }

    /// `act(x + norm(conv(act(norm(conv(x))))))`
    fn res_block(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.conv_norm_act(&format!("{name}.res_a"), x, ConvGeom::same(3, 1))?;
        let y = self.conv(&format!("{name}.res_b"), y, ConvGeom::same(3, 1))?;
        let y = self.norm(y)?;
        let y = self.g.add(x, y)?;
        Ok(self.act(y))
    }

    /// Strided conv followed by a residual block.
    fn down(&mut self, name: &str, x: Var) -> Result<Var> {
        let geom = ConvGeom {
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        let y = self.conv_norm_act(name, x, geom)?;
        self.res_block(name, y)
    }

    fn up(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.g.upsample2x(x)?;
        self.conv_norm_act(name, y, ConvGeom::same(3, 1))
    }

    fn image_head(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.conv(name, x, ConvGeom::same(3, 1))?;
        Ok(self.g.sigmoid(y))
    }

    fn coarse(&mut self, input: Var) -> Result<Var> {
        let mut x = self.stem("coarse.stem", input)?;
        for l in 1..=self.cfg.coarse_levels {
            x = self.down(&format!("coarse.down{l}"), x)?;
        }
        for (i, &rate) in self.cfg.dilation_rates.clone().iter().enumerate() {
            let y = self.conv(&format!("coarse.dilated{i}"), x, ConvGeom::same(3, rate))?;
            let y = self.norm(y)?;
            let y = self.g.add(x, y)?;
            x = self.act(y);
        }
        for l in (1..=self.cfg.coarse_levels).rev() {
            x = self.up(&format!("coarse.up{l}"), x)?;
        }
        self.image_head("coarse.out", x)
    }

    fn refine(&mut self, input: Var) -> Result<(Var, [Var; DAM_LEVELS])> {
        let levels = self.cfg.dam_levels;
        let mut skips = Vec::with_capacity(levels);
        let mut x = self.stem("dam.stem", input)?;
        skips.push(x);
        for l in 1..=levels {
            x = self.down(&format!("dam.down{l}"), x)?;
            if l < levels {
                skips.push(x);
            }
        }
        let mut fakeness = [x; DAM_LEVELS];
        for j in (0..levels).rev() {
            let t = self.up(&format!("dam.up{j}"), x)?;
            let p = DamBlockParams {
                fuse_w: self.p.var(&format!("dam.block{j}.fuse.w"))?,
                fuse_b: self.p.var(&format!("dam.block{j}.fuse.b"))?,
                fake_w: self.p.var(&format!("dam.block{j}.fake.w"))?,
                fake_b: self.p.var(&format!("dam.block{j}.fake.b"))?,
            };
            let block = dam_block(self.g, p, t, skips[j])?;
            fakeness[j] = block.fakeness;
            x = block.out;
        }
        let out = self.image_head("dam.out", x)?;
        Ok((out, fakeness))
    }

    fn discriminate(&mut self, image: Var) -> Result<Var> {
        let (layers, _) = self.cfg.disc_layout();
        let geom = ConvGeom {
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        let mut x = image;
        for k in 0..layers {
            let y = self.conv(&format!("disc.conv{k}"), x, geom)?;
            x = self.act(y);
        }
        let logit = self.conv("disc.fc", x, ConvGeom::UNIT)?;
        Ok(self.g.sigmoid(logit))
    }
}

fn check_input(cfg: &ModelConfig, shape: &[usize], channels: usize) -> Result<()> {
    match shape {
        &[_, c, h, w] if c == channels && h == cfg.resolution && w == cfg.resolution => Ok(()),
        other => Err(Error::Shape(format!(
            "expected [batch, {channels}, {r}, {r}], got {other:?}",
            r = cfg.resolution
        ))),
    }
}

/// Records the coarse stage: `[b, 4, h, w]` input to a `[b, 3, h, w]` image.
pub fn coarse_graph(g: &mut Graph, cfg: &ModelConfig, p: &Bound, input: Var) -> Result<Var> {
    check_input(cfg, g.value(input).shape(), 4)?;
    Net { g, p, cfg }.coarse(input)
}

/// Records the refinement stage on a composited `[b, 4, h, w]` input.
pub fn dam_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    input: Var,
) -> Result<(Var, [Var; DAM_LEVELS])> {
    check_input(cfg, g.value(input).shape(), 4)?;
    Net { g, p, cfg }.refine(input)
}

/// Records the full generator.
///
/// The refinement stage sees `G_C(x) ⊙ M + x ⊙ (1 − M)` plus the mask channel,
/// so known pixels always come from the input.
pub fn generator_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    generator_input: &Tensor,
) -> Result<GeneratorVars> {
    check_input(cfg, generator_input.shape(), 4)?;
    let [n, _, h, w] = generator_input.dims4()?;
    let plane = h * w;
    let mut masked = Tensor::zeros(&[n, 3, h, w]);
    let mut mask = Tensor::zeros(&[n, 1, h, w]);
    for bi in 0..n {
        let src = &generator_input.data()[bi * 4 * plane..(bi + 1) * 4 * plane];
        masked.data_mut()[bi * 3 * plane..(bi + 1) * 3 * plane].copy_from_slice(&src[..3 * plane]);
        mask.data_mut()[bi * plane..(bi + 1) * plane].copy_from_slice(&src[3 * plane..]);
    }
    let keep = mask.map(|m| 1.0 - m);
    let known = crate::autograd::broadcast_channel_mul(&masked, &keep)?;

    let input = g.constant(generator_input.clone());
    let coarse = coarse_graph(g, cfg, p, input)?;
    let hole = g.mul_const(coarse, mask.clone())?;
    let composite = g.add_const(hole, &known)?;
    let mask_var = g.constant(mask);
    let dam_input = g.concat_channels(&[composite, mask_var])?;
    let (final_image, fakeness) = dam_graph(g, cfg, p, dam_input)?;
    Ok(GeneratorVars {
        coarse,
        final_image,
        fakeness,
    })
}

/// Records the discriminator; returns `[b, 1, 1, 1]` probabilities.
pub fn discriminator_graph(g: &mut Graph, cfg: &ModelConfig, p: &Bound, image: Var) -> Result<Var> {
    check_input(cfg, g.value(image).shape(), 3)?;
    Net { g, p, cfg }.discriminate(image)
}

/// Coarse stage only, without gradient tracking.
pub fn coarse_forward(cfg: &ModelConfig, params: &ParameterStore, input: &Tensor) -> Result<ImageTensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let y = coarse_graph(&mut g, cfg, &p, x)?;
    ImageTensor::new(g.value(y).clone())
}

/// Refinement stage only, on an already composited input.
pub fn dam_forward(
    cfg: &ModelConfig,
    params: &ParameterStore,
    input: &Tensor,
) -> Result<(ImageTensor, Vec<FakenessMap>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(input.clone());
    let (y, maps) = dam_graph(&mut g, cfg, &p, x)?;
    let fakeness = maps
        .iter()
        .enumerate()
        .map(|(j, &m)| FakenessMap {
            scale: j,
            map: g.value(m).clone(),
        })
        .collect();
    Ok((ImageTensor::new(g.value(y).clone())?, fakeness))
}

/// Full generator pass, without gradient tracking.
pub fn generator_forward(
    cfg: &ModelConfig,
    params: &ParameterStore,
    generator_input: &Tensor,
) -> Result<GeneratorOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let v = generator_graph(&mut g, cfg, &p, generator_input)?;
    Ok(GeneratorOutput {
        coarse: ImageTensor::new(g.value(v.coarse).clone())?,
        final_image: ImageTensor::new(g.value(v.final_image).clone())?,
        fakeness: v
            .fakeness
            .iter()
            .enumerate()
            .map(|(j, &m)| FakenessMap {
                scale: j,
                map: g.value(m).clone(),
            })
            .collect(),
    })
}

/// Per-sample real/fake probabilities, shape `[b]`.
pub fn discriminator_forward(cfg: &ModelConfig, params: &ParameterStore, image: &ImageTensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(image.tensor().clone());
    let s = discriminator_graph(&mut g, cfg, &p, x)?;
    Ok(g.value(s).data().to_vec())
}

/// Convenience: runs the generator on a masked batch.
pub fn inpaint(cfg: &ModelConfig, params: &ParameterStore, image: &ImageTensor, mask: &Mask) -> Result<GeneratorOutput> {
    let input = crate::data::apply_mask(image, mask, crate::data::Fill::Zeros)?;
    generator_forward(cfg, params, &input.generator_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(n: usize, res: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::from_fn(&[n, 4, res, res], |_| rng.random_range(0.0..1.0));
        let plane = res * res;
        for bi in 0..n {
            for p in 0..plane {
                let m = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
                t.data_mut()[(bi * 4 + 3) * plane + p] = m;
            }
        }
        t
    }

    #[test]
    fn initialization_is_deterministic() {
        let cfg = ModelConfig::micro();
        assert_eq!(build_generator(&cfg, 5).unwrap(), build_generator(&cfg, 5).unwrap());
        assert_ne!(build_generator(&cfg, 5).unwrap(), build_generator(&cfg, 6).unwrap());
    }

    #[test]
    fn rejects_bad_resolution_and_levels() {
        let cfg = ModelConfig { resolution: 120, ..ModelConfig::default() };
        let err = build_generator(&cfg, 0).unwrap_err().to_string();
        assert!(err.contains("resolution"), "{err}");
        let cfg = ModelConfig { dam_levels: 3, ..ModelConfig::default() };
        assert!(build_generator(&cfg, 0).unwrap_err().to_string().contains("dam_levels"));
    }

    #[test]
    fn parameter_names_are_partitioned_by_network() {
        let cfg = ModelConfig::micro();
        let g = build_generator(&cfg, 0).unwrap();
        assert!(g.names().all(|n| n.starts_with("coarse.") || n.starts_with("dam.")));
        let d = build_discriminator(&cfg, 0).unwrap();
        assert!(d.names().all(|n| n.starts_with("disc.")));
    }

    #[test]
    fn default_parameter_counts_are_pinned() {
        let cfg = ModelConfig::default();
        assert_eq!(build_generator(&cfg, 0).unwrap().parameter_count(), 20_147_338);
        assert_eq!(build_discriminator(&cfg, 0).unwrap().parameter_count(), 3_918_977);
    }

    #[test]
    fn generator_shapes_and_ranges() {
        let cfg = ModelConfig::micro();
        let params = build_generator(&cfg, 1).unwrap();
        let out = generator_forward(&cfg, &params, &random_input(2, 16, 3)).unwrap();
        assert_eq!(out.coarse.tensor().shape(), &[2, 3, 16, 16]);
        assert_eq!(out.final_image.tensor().shape(), &[2, 3, 16, 16]);
        assert_eq!(out.fakeness.len(), 4);
        for (j, m) in out.fakeness.iter().enumerate() {
            assert_eq!(m.scale, j);
            assert_eq!(m.map.shape(), &[2, 1, 16 >> j, 16 >> j]);
            assert!(m.map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zeroed_output_layer_gives_half_gray() {
        let cfg = ModelConfig::micro();
        let mut params = build_generator(&cfg, 1).unwrap();
        for (name, t) in params.iter_mut() {
            if name.starts_with("coarse.out.") {
                t.data_mut().fill(0.0);
            }
        }
        let out = coarse_forward(&cfg, &params, &random_input(1, 16, 4)).unwrap();
        assert!(out.tensor().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn discriminator_shape_and_zero_head() {
        let cfg = ModelConfig::micro();
        let mut d = build_discriminator(&cfg, 2).unwrap();
        let img = ImageTensor::filled(5, 16, 0.3);
        let s = discriminator_forward(&cfg, &d, &img).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(s, discriminator_forward(&cfg, &d, &img).unwrap());
        for (name, t) in d.iter_mut() {
            if name.starts_with("disc.fc.") {
                t.data_mut().fill(0.0);
            }
        }
        let s = discriminator_forward(&cfg, &d, &img).unwrap();
        assert!(s.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let cfg = ModelConfig::micro();
        let params = build_generator(&cfg, 1).unwrap();
        let bad = Tensor::zeros(&[1, 4, 32, 32]);
        assert!(matches!(coarse_forward(&cfg, &params, &bad), Err(Error::Shape(_))));
        let bad = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(matches!(dam_forward(&cfg, &params, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn dam_block_rejects_spatial_mismatch() {
        let mut g = Graph::new();
        let mk = |g: &mut Graph, shape: &[usize]| g.constant(Tensor::zeros(shape));
        let p = DamBlockParams {
            fuse_w: mk(&mut g, &[2, 4, 1, 1]),
            fuse_b: mk(&mut g, &[2]),
            fake_w: mk(&mut g, &[1, 2, 1, 1]),
            fake_b: mk(&mut g, &[1]),
        };
        let t = mk(&mut g, &[1, 2, 4, 4]);
        let s = mk(&mut g, &[1, 2, 2, 2]);
        assert!(dam_block(&mut g, p, t, s).is_err());
    }
}
