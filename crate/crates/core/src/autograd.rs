//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every node that requires one.
//! Only the operations the inpainting networks and their losses need are
//! provided.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const UNIT: ConvGeom = ConvGeom {
        stride: 1,
        padding: 0,
        dilation: 1,
    };

    /// Stride-1 convolution that preserves spatial size for odd kernels.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    MulChannelBroadcast {
        x: Var,
        m: Var,
    },
    MulConst {
        x: Var,
        c: Tensor,
    },
    AddConst(Var),
    ConcatChannels(Vec<Var>),
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Sigmoid(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Upsample2x(Var),
    MeanAbsDiff {
        x: Var,
        target: Tensor,
    },
    NegMeanLog {
        x: Var,
        complement: bool,
        eps: f64,
    },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inserts a leaf. Trainable leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        let out = self.value(x).map(|v| v * scale);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    /// `x * m` where `m` is `[n, 1, h, w]` and is broadcast over the channels of `x`.
    pub fn mul_channel_broadcast(&mut self, x: Var, m: Var) -> Result<Var> {
        let out = broadcast_channel_mul(self.value(x), self.value(m))?;
        let rg = self.rg(x) || self.rg(m);
        Ok(self.push(out, Op::MulChannelBroadcast { x, m }, rg))
    }

    /// `x * c` for a constant `c` that is either the same shape as `x` or `[n, 1, h, w]`.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let out = if c.shape() == self.value(x).shape() {
            self.value(x).zip_map(&c, |a, b| a * b)?
        } else {
            broadcast_channel_mul(self.value(x), &c)?
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst { x, c }, rg))
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(c, |a, b| a + b)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&vals)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::ConcatChannels(xs.to_vec()), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Per-(sample, channel) normalization without affine parameters.
    ///
    /// A single-pixel plane has no spatial statistics; it passes through
    /// unchanged.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let plane = h * w;
        let input = self.value(x);
        let mut out = input.clone();
        let mut inv_std = vec![1.0; n * c];
        if plane > 1 {
            for (nc, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let mean = chunk.iter().sum::<f64>() / plane as f64;
                let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std[nc] = s;
                for v in chunk.iter_mut() {
                    *v = (*v - mean) * s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::InstanceNorm { x, inv_std }, rg))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            let s = &src[nc * h * w..(nc + 1) * h * w];
            let d = &mut data[nc * ho * wo..(nc + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    d[y * wo + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let out = Tensor::new(&[n, c, ho, wo], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample2x(x), rg))
    }

    /// `mean(|x - target|)` with a constant target.
    pub fn mean_abs_diff(&mut self, x: Var, target: Tensor) -> Result<Var> {
        self.value(x).expect_same_shape(&target)?;
        let n = target.len() as f64;
        let sum: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(sum / n), Op::MeanAbsDiff { x, target }, rg))
    }

    /// `-mean(log(clamp(x)))`, or `-mean(log(1 - clamp(x)))` when `complement`.
    pub fn neg_mean_log(&mut self, x: Var, complement: bool, eps: f64) -> Var {
        let vals = self.value(x).data();
        let n = vals.len() as f64;
        let sum: f64 = vals
            .iter()
            .map(|&s| {
                let s = s.clamp(eps, 1.0 - eps);
                if complement {
                    (1.0 - s).ln()
                } else {
                    s.ln()
                }
            })
            .sum();
        let rg = self.rg(x);
        self.push(
            Tensor::scalar(-sum / n),
            Op::NegMeanLog { x, complement, eps },
            rg,
        )
    }

    /// `Σ wᵢ·xᵢ` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::Shape("empty weighted sum".into()))?;
        let mut out = Tensor::zeros(self.value(first).shape());
        for &(v, w) in terms {
            let scaled = self.value(v).map(|x| x * w);
            out.expect_same_shape(&scaled)?;
            out.add_assign(&scaled);
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(out, Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let mut contributions: Vec<(Var, Tensor)> = Vec::new();
            self.node_backward(node, &gy, &mut contributions)?;
            grads[idx] = Some(gy);
            for (v, g) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, gy: &Tensor, out: &mut Vec<(Var, Tensor)>) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let (gx, gw) = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    *geom,
                    need_x,
                    need_w,
                )?;
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(gw) = gw {
                    out.push((*w, gw));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let [n, c, h, wd] = gy.dims4()?;
                        let plane = h * wd;
                        let mut gb = vec![0.0; c];
                        for bi in 0..n {
                            for (ci, acc) in gb.iter_mut().enumerate() {
                                let off = (bi * c + ci) * plane;
                                *acc += gy.data()[off..off + plane].iter().sum::<f64>();
                            }
                        }
                        out.push((*b, Tensor::new(&[c], gb)?));
                    }
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    out.push((*a, gy.clone()));
                }
                if self.rg(*b) {
                    out.push((*b, gy.clone()));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, gy.zip_map(self.value(*b), |g, v| g * v)?));
                }
                if self.rg(*b) {
                    out.push((*b, gy.zip_map(self.value(*a), |g, v| g * v)?));
                }
            }
            Op::Affine { x, scale } => {
                out.push((*x, gy.map(|g| g * scale)));
            }
            Op::MulChannelBroadcast { x, m } => {
                let xv = self.value(*x);
                let mv = self.value(*m);
                if self.rg(*x) {
                    out.push((*x, broadcast_channel_mul(gy, mv)?));
                }
                if self.rg(*m) {
                    let [n, c, h, w] = xv.dims4()?;
                    let plane = h * w;
                    let mut gm = Tensor::zeros(mv.shape());
                    for bi in 0..n {
                        let dst = &mut gm.data_mut()[bi * plane..(bi + 1) * plane];
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            let (gy, x) = (&gy.data()[off..off + plane], &xv.data()[off..off + plane]);
                            for ((d, g), x) in dst.iter_mut().zip(gy).zip(x) {
                                *d += g * x;
                            }
                        }
                    }
                    out.push((*m, gm));
                }
            }
            Op::MulConst { x, c } => {
                let g = if c.shape() == gy.shape() {
                    gy.zip_map(c, |g, v| g * v)?
                } else {
                    broadcast_channel_mul(gy, c)?
                };
                out.push((*x, g));
            }
            Op::AddConst(x) => out.push((*x, gy.clone())),
            Op::ConcatChannels(xs) => {
                let [n, total_c, h, w] = gy.dims4()?;
                let plane = h * w;
                let mut c_off = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.rg(v) {
                        let mut data = Vec::with_capacity(n * c * plane);
                        for bi in 0..n {
                            let start = (bi * total_c + c_off) * plane;
                            data.extend_from_slice(&gy.data()[start..start + c * plane]);
                        }
                        out.push((v, Tensor::new(&[n, c, h, w], data)?));
                    }
                    c_off += c;
                }
            }
            Op::LeakyRelu { x, slope } => {
                let g = gy.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { g * slope })?;
                out.push((*x, g));
            }
            Op::Sigmoid(x) => {
                let g = gy.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                out.push((*x, g));
            }
            Op::InstanceNorm { x, inv_std } => {
                let [_, _, h, w] = gy.dims4()?;
                let plane = h * w;
                if plane == 1 {
                    out.push((*x, gy.clone()));
                } else {
                    let mut gx = gy.clone();
                    let y = node.value.data();
                    for (nc, chunk) in gx.data_mut().chunks_mut(plane).enumerate() {
                        let yc = &y[nc * plane..(nc + 1) * plane];
                        let mean_g = chunk.iter().sum::<f64>() / plane as f64;
                        let mean_gy =
                            chunk.iter().zip(yc).map(|(g, y)| g * y).sum::<f64>() / plane as f64;
                        let s = inv_std[nc];
                        for (g, yv) in chunk.iter_mut().zip(yc) {
                            *g = s * (*g - mean_g - yv * mean_gy);
                        }
                    }
                    out.push((*x, gx));
                }
            }
            Op::Upsample2x(x) => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for nc in 0..n * c {
                    let s = &gy.data()[nc * ho * wo..(nc + 1) * ho * wo];
                    let d = &mut gx.data_mut()[nc * h * w..(nc + 1) * h * w];
                    for yy in 0..ho {
                        for xx in 0..wo {
                            d[(yy / 2) * w + xx / 2] += s[yy * wo + xx];
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::MeanAbsDiff { x, target } => {
                let g0 = gy.item() / target.len() as f64;
                let g = self.value(*x).zip_map(target, |a, b| {
                    if a > b {
                        g0
                    } else if a < b {
                        -g0
                    } else {
                        0.0
                    }
                })?;
                out.push((*x, g));
            }
            Op::NegMeanLog { x, complement, eps } => {
                let xv = self.value(*x);
                let g0 = gy.item() / xv.len() as f64;
                let (lo, hi) = (*eps, 1.0 - *eps);
                let g = xv.map(|s| {
                    if s < lo || s > hi {
                        0.0
                    } else if *complement {
                        g0 / (1.0 - s)
                    } else {
                        -g0 / s
                    }
                });
                out.push((*x, g));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.rg(v) {
                        out.push((v, gy.map(|g| g * w)));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn broadcast_channel_mul(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    if m.shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!(
            "cannot broadcast {:?} over {:?}",
            m.shape(),
            x.shape()
        )));
    }
    let plane = h * w;
    let mut out = x.clone();
    for bi in 0..n {
        let mp = &m.data()[bi * plane..(bi + 1) * plane];
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            for (v, mv) in out.data_mut()[off..off + plane].iter_mut().zip(mp) {
                *v *= mv;
            }
        }
    }
    Ok(out)
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn resolve(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Result<Self> {
        let [n, cin, h, wd] = x.dims4()?;
        let [cout, wcin, kh, kw] = w.dims4()?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv weight expects {wcin} input channels, got {cin}"
            )));
        }
        let (Some(ho), Some(wo)) = (geom.output_size(h, kh), geom.output_size(wd, kw)) else {
            return Err(Error::Shape(format!(
                "{kh}x{kw} kernel does not fit a {h}x{wd} input with {geom:?}"
            )));
        };
        Ok(ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self, geom: ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && geom == ConvGeom::UNIT
    }
}

fn im2col(src: &[f64], d: &ConvDims, geom: ConvGeom, cols: &mut [f64]) {
    let p = d.p();
    for ci in 0..d.cin {
        let plane = &src[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * geom.stride + ky * geom.dilation) as isize - geom.padding as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx * geom.dilation) as isize
                            - geom.padding as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, geom: ConvGeom, dst: &mut [f64]) {
    let p = d.p();
    for ci in 0..d.cin {
        let plane = &mut dst[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * geom.stride + ky * geom.dilation) as isize - geom.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * geom.stride + kx * geom.dilation) as isize
                            - geom.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            drow[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C = A·B (+ C when accumulate)` for row-major `a` (m×k) and `b` (k×n),
/// with optional transposition of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover every index implied by the dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    geom: ConvGeom,
) -> Result<Tensor> {
    let d = ConvDims::resolve(x, w, geom)?;
    if let Some(b) = b {
        if b.shape() != [d.cout] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?}, expected [{}]",
                b.shape(),
                d.cout
            )));
        }
    }
    let (k, p) = (d.k(), d.p());
    let pointwise = d.is_pointwise(geom);
    let mut out = vec![0.0; d.n * d.cout * p];
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
    let in_item = d.cin * d.h * d.w;
    for bi in 0..d.n {
        let src = &x.data()[bi * in_item..(bi + 1) * in_item];
        let cols_ref: &[f64] = if pointwise {
            src
        } else {
            im2col(src, &d, geom, &mut cols);
            &cols
        };
        let dst = &mut out[bi * d.cout * p..(bi + 1) * d.cout * p];
        gemm(d.cout, k, p, w.data(), false, cols_ref, false, dst, false);
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(&[d.n, d.cout, d.ho, d.wo], out)
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    geom: ConvGeom,
    need_x: bool,
    need_w: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let d = ConvDims::resolve(x, w, geom)?;
    let (k, p) = (d.k(), d.p());
    let pointwise = d.is_pointwise(geom);
    let in_item = d.cin * d.h * d.w;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
    let mut gcols = if need_x && !pointwise {
        vec![0.0; k * p]
    } else {
        Vec::new()
    };
    for bi in 0..d.n {
        let gy_b = &gy.data()[bi * d.cout * p..(bi + 1) * d.cout * p];
        if let Some(gw) = gw.as_mut() {
            let src = &x.data()[bi * in_item..(bi + 1) * in_item];
            let cols_ref: &[f64] = if pointwise {
                src
            } else {
                im2col(src, &d, geom, &mut cols);
                &cols
            };
            gemm(d.cout, p, k, gy_b, false, cols_ref, true, gw.data_mut(), true);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx.data_mut()[bi * in_item..(bi + 1) * in_item];
            if pointwise {
                gemm(k, d.cout, p, w.data(), true, gy_b, false, dst, false);
            } else {
                gemm(k, d.cout, p, w.data(), true, gy_b, false, &mut gcols, false);
                col2im(&gcols, &d, geom, dst);
            }
        }
    }
    Ok((gx, gw))
}
