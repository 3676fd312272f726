//! Residual bottleneck block with an MVF module in front of its first convolution.
//!
//! ```text
//! x ──► MVF ──► 1x1 ─ BN ─ ReLU ─► 3x3/s ─ BN ─ ReLU ─► 1x1 ─ BN ──► + ─ ReLU ─► y
//! └──────────────────── identity or (1x1/s ─ BN) ────────────────────┘
//! ```
//!
//! The shortcut carries the block input itself, not the MVF output.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{init_gaussian, mvf_backward, mvf_forward, MvfConfig, MvfTrace, MvfWeights};
use crate::error::{shape_err, Result};
use crate::ops::{
    conv2d_spatial, conv2d_spatial_backward, conv_pointwise, conv_pointwise_backward, subsample_spatial,
    subsample_spatial_backward, BatchNorm, NormCache, NormMode, PointwiseWeights, SpatialWeights,
};
use crate::params::{join, visit_one, visit_one_mut, ParamKind, ParamMut, ParamRef, Parameterized};
use crate::tensor::{add, relu, relu_backward, Float, VideoTensor};

/// An MVF module together with its configuration and (optionally learnable) view weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MvfUnit<T> {
    pub cfg: MvfConfig,
    pub weights: MvfWeights<T>,
    /// Current view weights `[beta_t, beta_h, beta_w]`; trained only with `cfg.learnable_beta`.
    pub beta: [T; 3],
}

impl<T: Float> MvfUnit<T> {
    pub fn new(cfg: MvfConfig, weights: MvfWeights<T>) -> Self {
        MvfUnit { beta: cfg.betas().map(T::lit), cfg, weights }
    }

    pub fn effective_config(&self) -> MvfConfig {
        let b = self.beta.map(|v| v.to_f64().unwrap_or(f64::NAN));
        MvfConfig { beta_t: b[0], beta_h: b[1], beta_w: b[2], ..self.cfg }
    }

    pub fn forward(&self, x: &VideoTensor<T>) -> Result<MvfTrace<T>> {
        mvf_forward(x, &self.effective_config(), &self.weights)
    }

    fn zeroed(&self) -> Self {
        MvfUnit { cfg: self.cfg, weights: MvfWeights::zeros(self.weights.channels()), beta: [T::zero(); 3] }
    }
}

impl<T: Float> Parameterized<T> for MvfUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.weights.visit(prefix, f);
        if self.cfg.learnable_beta {
            visit_one(f, prefix, "beta", ParamKind::NoDecay, vec![3], &self.beta);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.weights.visit_mut(prefix, f);
        if self.cfg.learnable_beta {
            visit_one_mut(f, prefix, "beta", ParamKind::NoDecay, vec![3], &mut self.beta);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub conv: PointwiseWeights<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckBlock<T> {
    pub mvf: Option<MvfUnit<T>>,
    pub conv1: PointwiseWeights<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: SpatialWeights<T>,
    pub bn2: BatchNorm<T>,
    pub conv3: PointwiseWeights<T>,
    pub bn3: BatchNorm<T>,
    pub projection: Option<Projection<T>>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    x: VideoTensor<T>,
    mvf: Option<MvfTrace<T>>,
    bn1: NormCache<T>,
    r1: VideoTensor<T>,
    bn2: NormCache<T>,
    r2: VideoTensor<T>,
    bn3: NormCache<T>,
    projection: Option<(VideoTensor<T>, NormCache<T>)>,
    y: VideoTensor<T>,
}

impl<T: Float> BlockCache<T> {
    pub fn output(&self) -> &VideoTensor<T> {
        &self.y
    }
}

pub(crate) fn push_positive<T: Float>(x: &VideoTensor<T>, out: &mut Vec<bool>) {
    out.extend(x.data().iter().map(|&v| v > T::zero()));
}

fn he_normal<T: Float>(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..len).map(|_| T::lit(normal.sample(rng))).collect()
}

impl<T: Float> BottleneckBlock<T> {
    /// Every ReLU mask of a forward pass, in a fixed order. Two inputs with equal patterns lie
    /// on the same smooth piece of the block.
    pub fn activation_pattern(&self, cache: &BlockCache<T>, out: &mut Vec<bool>) {
        if let (Some(unit), Some(trace)) = (&self.mvf, &cache.mvf) {
            trace.activation_pattern(unit.cfg.activation, out);
        }
        push_positive(&cache.r1, out);
        push_positive(&cache.r2, out);
        push_positive(&cache.y, out);
    }

    /// He-initialised block. The MVF taps come from their own seed so that backbone weights do
    /// not depend on whether a module is present.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        c_in: usize,
        mid: usize,
        c_out: usize,
        stride: usize,
        mvf: Option<(MvfConfig, f64, u64)>,
        zero_init_residual: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mvf = match mvf {
            Some((cfg, std, seed)) => Some(MvfUnit::new(cfg, init_gaussian(&cfg, c_in, std, seed)?)),
            None => None,
        };
        let conv1 = PointwiseWeights::new(mid, c_in, he_normal(rng, c_in, mid * c_in), None)?;
        let conv2 = SpatialWeights::new(mid, mid, he_normal(rng, mid * 9, mid * mid * 9))?;
        let conv3 = PointwiseWeights::new(c_out, mid, he_normal(rng, mid, c_out * mid), None)?;
        let projection = if c_in != c_out || stride != 1 {
            Some(Projection {
                conv: PointwiseWeights::new(c_out, c_in, he_normal(rng, c_in, c_out * c_in), None)?,
                bn: BatchNorm::new(c_out),
            })
        } else {
            None
        };
        let mut bn3 = BatchNorm::new(c_out);
        if zero_init_residual {
            bn3.gamma.iter_mut().for_each(|g| *g = T::zero());
        }
        Ok(BottleneckBlock {
            mvf,
            conv1,
            bn1: BatchNorm::new(mid),
            conv2,
            bn2: BatchNorm::new(mid),
            conv3,
            bn3,
            projection,
            stride,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.c_in
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.c_out
    }

    pub fn forward(&self, x: &VideoTensor<T>, mode: NormMode) -> Result<(VideoTensor<T>, BlockCache<T>)> {
        if x.shape().c != self.in_channels() {
            return shape_err(format!("block expects {} channels, got {}", self.in_channels(), x.shape().c));
        }
        let mvf = match &self.mvf {
            Some(unit) => Some(unit.forward(x)?),
            None => None,
        };
        let main_in = mvf.as_ref().map_or(x, |tr| &tr.y);
        let (b1, bn1) = self.bn1.forward(&conv_pointwise(main_in, &self.conv1)?, mode)?;
        let r1 = relu(&b1);
        let (b2, bn2) = self.bn2.forward(&conv2d_spatial(&r1, &self.conv2, self.stride)?, mode)?;
        let r2 = relu(&b2);
        let (b3, bn3) = self.bn3.forward(&conv_pointwise(&r2, &self.conv3)?, mode)?;
        let (shortcut, projection) = match &self.projection {
            Some(p) => {
                let xs = subsample_spatial(x, self.stride)?;
                let (out, cache) = p.bn.forward(&conv_pointwise(&xs, &p.conv)?, mode)?;
                (out, Some((xs, cache)))
            }
            None => (x.clone(), None),
        };
        let y = relu(&add(&b3, &shortcut)?);
        let cache = BlockCache { x: x.clone(), mvf, bn1, r1, bn2, r2, bn3, projection, y: y.clone() };
        Ok((y, cache))
    }

    /// Gradients with respect to the input and to every weight, the latter packed in a block
    /// of the same layout (running statistics are left at zero).
    pub fn backward(&self, cache: &BlockCache<T>, d_y: &VideoTensor<T>) -> Result<(VideoTensor<T>, Self)> {
        let d_sum = relu_backward(&cache.y, d_y)?;
        let mut grads = self.zeroed();

        let g3 = self.bn3.backward(&cache.bn3, &d_sum)?;
        (grads.bn3.gamma, grads.bn3.beta) = (g3.d_gamma, g3.d_beta);
        let p3 = conv_pointwise_backward(&cache.r2, &self.conv3, &g3.d_input)?;
        grads.conv3 = p3.d_weights;
        let g2 = self.bn2.backward(&cache.bn2, &relu_backward(&cache.r2, &p3.d_input)?)?;
        (grads.bn2.gamma, grads.bn2.beta) = (g2.d_gamma, g2.d_beta);
        let p2 = conv2d_spatial_backward(&cache.r1, &self.conv2, self.stride, &g2.d_input)?;
        grads.conv2 = p2.d_weights;
        let g1 = self.bn1.backward(&cache.bn1, &relu_backward(&cache.r1, &p2.d_input)?)?;
        (grads.bn1.gamma, grads.bn1.beta) = (g1.d_gamma, g1.d_beta);
        let main_in = cache.mvf.as_ref().map_or(&cache.x, |tr| &tr.y);
        let p1 = conv_pointwise_backward(main_in, &self.conv1, &g1.d_input)?;
        grads.conv1 = p1.d_weights;

        let mut d_x = match (&self.mvf, &cache.mvf) {
            (Some(unit), Some(trace)) => {
                let g = mvf_backward(trace, &unit.effective_config(), &unit.weights, &p1.d_input)?;
                let gu = grads.mvf.as_mut().expect("mirrors self");
                gu.weights = g.d_weights;
                if let Some(db) = g.d_beta {
                    gu.beta = db;
                }
                g.d_x
            }
            _ => p1.d_input,
        };

        let d_short = match (&self.projection, &cache.projection) {
            (Some(p), Some((xs, bn_cache))) => {
                let gp = p.bn.backward(bn_cache, &d_sum)?;
                let pc = conv_pointwise_backward(xs, &p.conv, &gp.d_input)?;
                let gproj = grads.projection.as_mut().expect("mirrors self");
                (gproj.bn.gamma, gproj.bn.beta) = (gp.d_gamma, gp.d_beta);
                gproj.conv = pc.d_weights;
                subsample_spatial_backward(cache.x.shape(), self.stride, &pc.d_input)?
            }
            _ => d_sum,
        };
        for (d, &s) in d_x.data_mut().iter_mut().zip(d_short.data()) {
            *d += s;
        }
        Ok((d_x, grads))
    }

    pub fn update_running(&mut self, cache: &BlockCache<T>) {
        self.bn1.update_running(&cache.bn1);
        self.bn2.update_running(&cache.bn2);
        self.bn3.update_running(&cache.bn3);
        if let (Some(p), Some((_, c))) = (self.projection.as_mut(), cache.projection.as_ref()) {
            p.bn.update_running(c);
        }
    }

    fn zeroed(&self) -> Self {
        let zero_bn = |bn: &BatchNorm<T>| {
            let c = bn.channels();
            BatchNorm {
                gamma: vec![T::zero(); c],
                beta: vec![T::zero(); c],
                running_mean: vec![T::zero(); c],
                running_var: vec![T::zero(); c],
                ..bn.clone()
            }
        };
        BottleneckBlock {
            mvf: self.mvf.as_ref().map(MvfUnit::zeroed),
            conv1: self.conv1.zeros_like(),
            bn1: zero_bn(&self.bn1),
            conv2: SpatialWeights::zeros(self.conv2.c_out, self.conv2.c_in),
            bn2: zero_bn(&self.bn2),
            conv3: self.conv3.zeros_like(),
            bn3: zero_bn(&self.bn3),
            projection: self.projection.as_ref().map(|p| Projection { conv: p.conv.zeros_like(), bn: zero_bn(&p.bn) }),
            stride: self.stride,
        }
    }
}

impl<T: Float> Parameterized<T> for BottleneckBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        if let Some(m) = &self.mvf {
            m.visit(&join(prefix, "mvf"), f);
        }
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some(p) = &self.projection {
            p.conv.visit(&join(prefix, "proj.conv"), f);
            p.bn.visit(&join(prefix, "proj.bn"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        if let Some(m) = &mut self.mvf {
            m.visit_mut(&join(prefix, "mvf"), f);
        }
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some(p) = &mut self.projection {
            p.conv.visit_mut(&join(prefix, "proj.conv"), f);
            p.bn.visit_mut(&join(prefix, "proj.bn"), f);
        }
    }
}

/// Inference-mode forward of one block.
pub fn mvf_block_forward<T: Float>(x: &VideoTensor<T>, block: &BottleneckBlock<T>) -> Result<VideoTensor<T>> {
    Ok(block.forward(x, NormMode::Eval)?.0)
}
