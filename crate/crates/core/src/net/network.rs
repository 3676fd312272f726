use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BackboneSpec, NetworkSpec};
use crate::error::{shape_err, Error, Result};
use crate::mvf::{BlockCache, BottleneckBlock};
use crate::ops::{
    conv2d_spatial, conv2d_spatial_backward, global_avg_pool, global_avg_pool_backward, linear, linear_backward,
    BatchNorm, Features, LinearWeights, NormCache, NormMode, SpatialWeights,
};
use crate::params::{join, ParamMut, ParamRef, Parameterized};
use crate::tensor::{relu, relu_backward, Float, Shape, VideoTensor};

/// An instantiated backbone with bound weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub stem: SpatialWeights<T>,
    pub stem_bn: BatchNorm<T>,
    pub stem_stride: usize,
    /// Blocks in order, each tagged with its stage name.
    pub blocks: Vec<(String, BottleneckBlock<T>)>,
    pub fc: LinearWeights<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkCache<T> {
    input: VideoTensor<T>,
    stem_bn: NormCache<T>,
    stem_out: VideoTensor<T>,
    blocks: Vec<BlockCache<T>>,
    pooled: Features<T>,
}

fn mvf_seed(seed: u64, block: usize) -> u64 {
    seed ^ 0x4d56_4600_0000_0000 ^ ((block as u64 + 1) << 20)
}

/// Instantiate weights for an executable backbone.
///
/// Backbone weights are He-initialised from `seed`; MVF taps use `mvf_init_std` and streams
/// derived from `seed` and the block index, so two specs differing only in their MVF settings
/// share every backbone weight.
pub fn build_network<T: Float>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    let bb = spec.resolve()?;
    if !bb.is_executable() {
        return Err(Error::Config(format!(
            "backbone '{}' is descriptor-only (cost analysis); it cannot be executed",
            bb.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem_fan_in = bb.in_channels * 9;
    let stem = SpatialWeights::new(bb.stem.channels, bb.in_channels, he(&mut rng, stem_fan_in, bb.stem.channels * stem_fan_in))?;
    let mut blocks = Vec::new();
    for stage in &bb.stages {
        for i in 0..stage.blocks {
            let mvf = spec
                .has_mvf(&stage.name)
                .then(|| (spec.mvf, spec.mvf_init_std, mvf_seed(seed, blocks.len())));
            let block = BottleneckBlock::init(
                stage.block_in_channels(i),
                stage.bottleneck_channels,
                stage.out_channels,
                stage.block_stride(i),
                mvf,
                spec.zero_init_residual,
                &mut rng,
            )?;
            blocks.push((stage.name.clone(), block));
        }
    }
    let features = bb.feature_channels();
    let bound = 1.0 / (features as f64).sqrt();
    let weight = (0..spec.classes * features).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    let fc = LinearWeights { out_features: spec.classes, in_features: features, weight, bias: vec![T::zero(); spec.classes] };
    Ok(Network { spec: spec.clone(), stem, stem_bn: BatchNorm::new(bb.stem.channels), stem_stride: bb.stem.stride, blocks, fc })
}

fn he<T: Float>(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..len).map(|_| T::lit(normal.sample(rng))).collect()
}

impl<T: Float> Network<T> {
    pub fn backbone(&self) -> Result<BackboneSpec> {
        self.spec.backbone_spec()
    }

    pub fn mvf_block_count(&self) -> usize {
        self.blocks.iter().filter(|(_, b)| b.mvf.is_some()).count()
    }

    /// Expected shape of a batch of `n` clips.
    pub fn input_shape(&self, n: usize) -> Shape {
        let r = self.spec.input_resolution;
        Shape::new(n, self.stem.c_in, self.spec.frames, r, r)
    }

    fn check_input(&self, x: &VideoTensor<T>) -> Result<()> {
        let s = x.shape();
        if s != self.input_shape(s.n) {
            return shape_err(format!("network expects input {} but got {s}", self.input_shape(s.n)));
        }
        Ok(())
    }

    pub fn forward(&self, x: &VideoTensor<T>, mode: NormMode) -> Result<(Features<T>, NetworkCache<T>)> {
        self.check_input(x)?;
        let (stem_pre, stem_bn) = self.stem_bn.forward(&conv2d_spatial(x, &self.stem, self.stem_stride)?, mode)?;
        let stem_out = relu(&stem_pre);
        let mut h = stem_out.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (_, block) in &self.blocks {
            let (y, cache) = block.forward(&h, mode)?;
            debug_assert_eq!(y.shape().t, x.shape().t);
            caches.push(cache);
            h = y;
        }
        let pooled = global_avg_pool(&h);
        let logits = linear(&pooled, &self.fc)?;
        Ok((logits, NetworkCache { input: x.clone(), stem_bn, stem_out, blocks: caches, pooled }))
    }

    /// Every ReLU mask of a forward pass, stem first.
    pub fn activation_pattern(&self, cache: &NetworkCache<T>) -> Vec<bool> {
        let mut out = Vec::new();
        crate::mvf::block::push_positive(&cache.stem_out, &mut out);
        for ((_, block), c) in self.blocks.iter().zip(&cache.blocks) {
            block.activation_pattern(c, &mut out);
        }
        out
    }

    /// Inference-mode logits.
    pub fn logits(&self, x: &VideoTensor<T>) -> Result<Features<T>> {
        Ok(self.forward(x, NormMode::Eval)?.0)
    }

    /// Gradient with respect to the input and every weight (packed in a network of the same layout).
    pub fn backward(&self, cache: &NetworkCache<T>, d_logits: &Features<T>) -> Result<(VideoTensor<T>, Network<T>)> {
        let mut grads = self.zeroed();
        let fcg = linear_backward(&cache.pooled, &self.fc, d_logits)?;
        grads.fc = fcg.d_weights;
        let last_shape = cache.blocks.last().map_or(cache.stem_out.shape(), |c| c.output().shape());
        let mut d = global_avg_pool_backward(last_shape, &fcg.d_input)?;
        for (i, (_, block)) in self.blocks.iter().enumerate().rev() {
            let (d_in, g) = block.backward(&cache.blocks[i], &d)?;
            grads.blocks[i].1 = g;
            d = d_in;
        }
        let g = self.stem_bn.backward(&cache.stem_bn, &relu_backward(&cache.stem_out, &d)?)?;
        (grads.stem_bn.gamma, grads.stem_bn.beta) = (g.d_gamma, g.d_beta);
        let stem = conv2d_spatial_backward(&cache.input, &self.stem, self.stem_stride, &g.d_input)?;
        grads.stem = stem.d_weights;
        Ok((stem.d_input, grads))
    }

    /// Fold the batch statistics recorded in a training-mode cache into the running averages.
    pub fn update_running(&mut self, cache: &NetworkCache<T>) {
        self.stem_bn.update_running(&cache.stem_bn);
        for ((_, block), c) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.update_running(c);
        }
    }

    fn zeroed(&self) -> Network<T> {
        let mut z = self.clone();
        z.visit_mut("", &mut |p: ParamMut<'_, T>| p.data.iter_mut().for_each(|v| *v = T::zero()));
        z
    }
}

impl<T: Float> Parameterized<T> for Network<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.stem.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        let mut index = StageIndex::default();
        for (stage, block) in &self.blocks {
            block.visit(&join(prefix, &index.next(stage)), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        self.stem.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        let mut index = StageIndex::default();
        for (stage, block) in &mut self.blocks {
            block.visit_mut(&join(prefix, &index.next(stage)), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

#[derive(Default)]
struct StageIndex {
    stage: String,
    i: usize,
}

impl StageIndex {
    fn next(&mut self, stage: &str) -> String {
        if self.stage != stage {
            self.stage = stage.to_string();
            self.i = 0;
        }
        let name = format!("{stage}.{}", self.i);
        self.i += 1;
        name
    }
}
