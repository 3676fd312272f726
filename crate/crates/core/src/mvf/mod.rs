//! The multi-view fusion module.
//!
//! The first `round(alpha * C)` input channels go through three channel-wise 3-tap
//! convolutions, one along each of T, H and W. The three responses are weighted by
//! `beta_t`, `beta_h` and `beta_w`, summed, and passed through an activation. The module
//! output is `concat(pass_through, fused)`, so the untouched channels come first.

pub(crate) mod block;
mod shift;

pub use block::{mvf_block_forward, BlockCache, BottleneckBlock, MvfUnit};
pub use shift::{as_fixed_shift_weights, restore_channel_order, shift_fold, tsm_shift};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::ops::{conv1d_channelwise, conv1d_channelwise_backward, Axis, ChannelwiseKernel};
use crate::params::{visit_one, visit_one_mut, ParamKind, ParamMut, ParamRef, Parameterized};
use crate::tensor::{alpha_channels, concat_channels, split_channels, Float, VideoTensor};

/// Default standard deviation of the Gaussian tap initialisation.
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Float>(self, v: T) -> T {
        match self {
            Activation::Relu if v <= T::zero() => T::zero(),
            _ => v,
        }
    }

    fn derivative<T: Float>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre <= T::zero() => T::zero(),
            _ => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MvfConfig {
    pub alpha: f64,
    pub beta_t: f64,
    pub beta_h: f64,
    pub beta_w: f64,
    pub activation: Activation,
    /// Let gradients flow into the view weights. Off by default.
    pub learnable_beta: bool,
}

impl Default for MvfConfig {
    fn default() -> Self {
        MvfConfig { alpha: 0.5, beta_t: 1.0, beta_h: 1.0, beta_w: 1.0, activation: Activation::Relu, learnable_beta: false }
    }
}

impl MvfConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        MvfConfig { alpha, ..Default::default() }
    }

    pub fn with_betas(self, beta_t: f64, beta_h: f64, beta_w: f64) -> Self {
        MvfConfig { beta_t, beta_h, beta_w, ..self }
    }

    pub fn betas(&self) -> [f64; 3] {
        [self.beta_t, self.beta_h, self.beta_w]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return domain_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.betas().iter().any(|b| !b.is_finite()) {
            return domain_err("view weights must be finite");
        }
        Ok(())
    }

    /// Channels routed through the multi-view path for an input of `channels` channels.
    pub fn view_channels(&self, channels: usize) -> Result<usize> {
        alpha_channels(self.alpha, channels)
    }
}

/// The three per-view kernels, each over `round(alpha * C)` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MvfWeights<T> {
    pub k_t: ChannelwiseKernel<T>,
    pub k_h: ChannelwiseKernel<T>,
    pub k_w: ChannelwiseKernel<T>,
}

impl<T: Float> MvfWeights<T> {
    pub fn new(k_t: ChannelwiseKernel<T>, k_h: ChannelwiseKernel<T>, k_w: ChannelwiseKernel<T>) -> Result<Self> {
        if k_t.channels() != k_h.channels() || k_t.channels() != k_w.channels() {
            return shape_err("the three view kernels must cover the same channels");
        }
        Ok(MvfWeights { k_t, k_h, k_w })
    }

    pub fn identity(channels: usize) -> Self {
        MvfWeights {
            k_t: ChannelwiseKernel::identity(channels),
            k_h: ChannelwiseKernel::identity(channels),
            k_w: ChannelwiseKernel::identity(channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        MvfWeights {
            k_t: ChannelwiseKernel::zeros(channels),
            k_h: ChannelwiseKernel::zeros(channels),
            k_w: ChannelwiseKernel::zeros(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.k_t.channels()
    }

    pub fn kernel(&self, axis: Axis) -> &ChannelwiseKernel<T> {
        match axis {
            Axis::Temporal => &self.k_t,
            Axis::Height => &self.k_h,
            Axis::Width => &self.k_w,
        }
    }

    pub fn kernel_mut(&mut self, axis: Axis) -> &mut ChannelwiseKernel<T> {
        match axis {
            Axis::Temporal => &mut self.k_t,
            Axis::Height => &mut self.k_h,
            Axis::Width => &mut self.k_w,
        }
    }
}

impl<T: Float> Parameterized<T> for MvfWeights<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        for axis in Axis::ALL {
            let k = self.kernel(axis);
            let name = format!("k_{}", axis.name());
            visit_one(f, prefix, &name, ParamKind::Weight, vec![k.channels(), 3], k.flat());
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
        for axis in Axis::ALL {
            let k = self.kernel_mut(axis);
            let shape = vec![k.channels(), 3];
            let name = format!("k_{}", axis.name());
            visit_one_mut(f, prefix, &name, ParamKind::Weight, shape, k.flat_mut());
        }
    }
}

/// Intermediate tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct MvfTrace<T> {
    /// Multi-view input split.
    pub x1: VideoTensor<T>,
    pub o_t: VideoTensor<T>,
    pub o_h: VideoTensor<T>,
    pub o_w: VideoTensor<T>,
    /// Weighted view sum before the activation.
    pub fused: VideoTensor<T>,
    pub o1: VideoTensor<T>,
    pub y: VideoTensor<T>,
}

impl<T: Float> MvfTrace<T> {
    /// Which side of the kink each fused value lies on; empty for the identity activation.
    pub fn activation_pattern(&self, activation: Activation, out: &mut Vec<bool>) {
        if activation == Activation::Relu {
            out.extend(self.fused.data().iter().map(|&v| v > T::zero()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct MvfGrads<T> {
    pub d_x: VideoTensor<T>,
    pub d_weights: MvfWeights<T>,
    /// Present only when the configuration makes the view weights learnable.
    pub d_beta: Option<[T; 3]>,
}

fn betas_as<T: Float>(cfg: &MvfConfig) -> [T; 3] {
    cfg.betas().map(T::lit)
}

pub fn mvf_forward<T: Float>(x: &VideoTensor<T>, cfg: &MvfConfig, w: &MvfWeights<T>) -> Result<MvfTrace<T>> {
    cfg.validate()?;
    let split = split_channels(x, cfg.alpha)?;
    if w.channels() != split.part1.shape().c {
        return shape_err(format!(
            "weights cover {} channels but alpha={} selects {} of {}",
            w.channels(),
            cfg.alpha,
            split.part1.shape().c,
            x.shape().c
        ));
    }
    let o_t = conv1d_channelwise(&split.part1, &w.k_t, Axis::Temporal)?;
    let o_h = conv1d_channelwise(&split.part1, &w.k_h, Axis::Height)?;
    let o_w = conv1d_channelwise(&split.part1, &w.k_w, Axis::Width)?;
    let [bt, bh, bw] = betas_as::<T>(cfg);
    let mut fused = o_t.zeros_like();
    for (((f, &a), &b), &c) in fused.data_mut().iter_mut().zip(o_t.data()).zip(o_h.data()).zip(o_w.data()) {
        *f = bt * a + bh * b + bw * c;
    }
    let o1 = fused.map(|v| cfg.activation.apply(v));
    let y = concat_channels(&split.part2, &o1)?;
    Ok(MvfTrace { x1: split.part1, o_t, o_h, o_w, fused, o1, y })
}

pub fn mvf_backward<T: Float>(
    trace: &MvfTrace<T>,
    cfg: &MvfConfig,
    w: &MvfWeights<T>,
    d_y: &VideoTensor<T>,
) -> Result<MvfGrads<T>> {
    let shape = trace.y.shape();
    if d_y.shape() != shape {
        return shape_err(format!("d_y {} does not match output {}", d_y.shape(), shape));
    }
    let c1 = trace.x1.shape().c;
    let c2 = shape.c - c1;
    let d_x2 = d_y.channels(0, c2)?;
    let d_o1 = d_y.channels(c2, shape.c)?;
    let d_fused = trace.fused.zip_map(&d_o1, |pre, g| g * cfg.activation.derivative(pre))?;
    let betas = betas_as::<T>(cfg);
    let views = [&trace.o_t, &trace.o_h, &trace.o_w];
    let mut d_x1 = trace.x1.zeros_like();
    let mut d_weights = MvfWeights::zeros(c1);
    let mut d_beta = [T::zero(); 3];
    for (i, axis) in Axis::ALL.into_iter().enumerate() {
        d_beta[i] = d_fused.data().iter().zip(views[i].data()).map(|(&g, &o)| g * o).sum();
        let d_view = d_fused.map(|g| g * betas[i]);
        let pair = conv1d_channelwise_backward(&trace.x1, w.kernel(axis), axis, &d_view)?;
        for (acc, &g) in d_x1.data_mut().iter_mut().zip(pair.d_input.data()) {
            *acc += g;
        }
        *d_weights.kernel_mut(axis) = pair.d_weights;
    }
    let d_x = concat_channels(&d_x1, &d_x2)?;
    Ok(MvfGrads { d_x, d_weights, d_beta: cfg.learnable_beta.then_some(d_beta) })
}

/// I.i.d. zero-mean Gaussian taps for an input with `channels` channels, reproducible from `seed`.
pub fn init_gaussian<T: Float>(cfg: &MvfConfig, channels: usize, std: f64, seed: u64) -> Result<MvfWeights<T>> {
    if !(std > 0.0 && std.is_finite()) {
        return domain_err(format!("init std must be positive, got {std}"));
    }
    let c1 = cfg.view_channels(channels)?;
    let normal = Normal::new(0.0, std).map_err(|e| crate::Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = || {
        let taps = (0..c1).map(|_| [0; 3].map(|_| T::lit(normal.sample(&mut rng)))).collect();
        ChannelwiseKernel::new(taps)
    };
    let k_t = kernel();
    let k_h = kernel();
    let k_w = kernel();
    Ok(MvfWeights { k_t, k_h, k_w })
}

/// Which existing architecture a configuration reduces to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Specialization {
    /// `alpha = 0`: no temporal interaction at all.
    C2D,
    /// `alpha = 1`, spatial views off: depthwise temporal convolution over every channel.
    SlowOnlyDW,
    /// `alpha = 1/4`, spatial views off: a temporal shift with learnable kernels.
    LearnableTSM,
    FullMVF,
}

pub fn classify_specialization(cfg: &MvfConfig) -> Specialization {
    const TOL: f64 = 1e-12;
    let spatial_off = cfg.beta_h.abs() < TOL && cfg.beta_w.abs() < TOL;
    if cfg.alpha.abs() < TOL {
        Specialization::C2D
    } else if (cfg.alpha - 1.0).abs() < TOL && spatial_off {
        Specialization::SlowOnlyDW
    } else if (cfg.alpha - 0.25).abs() < TOL && spatial_off {
        Specialization::LearnableTSM
    } else {
        Specialization::FullMVF
    }
}
