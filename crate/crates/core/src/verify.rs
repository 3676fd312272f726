//! Self-checks exposed through the command line: gradient checks against central differences
//! and the exact equivalences between MVF settings and the architectures they reduce to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mvf::{
    as_fixed_shift_weights, init_gaussian, mvf_backward, mvf_forward, restore_channel_order, tsm_shift, Activation,
    BottleneckBlock, MvfConfig, MvfWeights,
};
use crate::net::{build_network, NetworkSpec};
use crate::ops::*;
use crate::params::{ParamKind, Parameterized};
use crate::tensor::{relu, relu_backward, Shape, VideoTensor};

/// Relative-error threshold every check must stay under.
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_GRAD_SEED: u64 = 7;
pub const DEFAULT_EQUIV_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    Ops,
    Mvf,
    Block,
    TinyNet,
}

impl GradTarget {
    pub const ALL: [GradTarget; 4] = [GradTarget::Ops, GradTarget::Mvf, GradTarget::Block, GradTarget::TinyNet];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Ops => "ops",
            GradTarget::Mvf => "mvf",
            GradTarget::Block => "block",
            GradTarget::TinyNet => "tiny-net",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Central-difference step. Train-mode batch norm couples every output to every input, so
    /// rounding anywhere in the forward pass reaches each difference and composite targets need
    /// a larger step; 3e-5 balances that against truncation error. Kinks are handled by step
    /// refinement.
    pub fn default_epsilon(self) -> f64 {
        match self {
            GradTarget::Ops | GradTarget::Mvf => 1e-6,
            GradTarget::Block | GradTarget::TinyNet => 3e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub target: String,
    pub case: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates re-measured with a smaller step because the first one straddled a ReLU kink.
    pub refined: usize,
    pub passed: bool,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_tensor(rng: &mut impl Rng, shape: Shape) -> VideoTensor<f64> {
    VideoTensor::new(shape, gaussian_vec(rng, shape.numel(), 1.0)).expect("sized")
}

/// Replace every learnable value with a random draw so that no gradient is trivially zero.
fn randomize<P: Parameterized<f64>>(p: &mut P, rng: &mut impl Rng) {
    p.visit_mut("", &mut |m| {
        let normal = Normal::new(0.0, 0.5).expect("valid");
        for v in m.data.iter_mut() {
            *v = match m.kind {
                ParamKind::Buffer => *v,
                ParamKind::NoDecay if m.name.ends_with("gamma") => 1.0 + 0.3 * normal.sample(rng),
                _ => normal.sample(rng),
            };
        }
    });
}

/// Compensated (Neumaier) dot product. Central differences subtract two nearly equal losses, so
/// `sum(r * y) - baseline`, with compensated (Neumaier) summation.
///
/// Central differences subtract two nearly equal losses. Summing exactly and removing the loss at
/// the unperturbed point keeps the returned value small, so its own rounding stays far below
/// the differences being measured.
fn weighted_sum(y: &[f64], r: &[f64], baseline: f64) -> f64 {
    let (mut sum, mut comp) = (-baseline, 0.0f64);
    for (a, b) in y.iter().zip(r) {
        let v = a * b;
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Outputs of a forward pass and the ReLU pattern it went through (empty for smooth functions).
type Probe = (Vec<f64>, Vec<bool>);

fn smooth(y: &[f64]) -> Probe {
    (y.to_vec(), Vec::new())
}

/// Runs checks with fixed settings and an optional corruption of every analytic gradient.
struct Checker {
    target: GradTarget,
    epsilon: f64,
    corrupt: bool,
    sample: Option<(usize, u64)>,
    cases: Vec<GradCase>,
}

impl Checker {
    /// Check `analytic` against the gradient of `sum(r * f(x))` at `x`.
    fn record(&mut self, case: &str, x: &[f64], analytic: &[f64], r: &[f64], mut f: impl FnMut(&[f64]) -> Probe) -> Result<()> {
        let analytic: Vec<f64> = if self.corrupt { analytic.iter().map(|g| g * 1.01 + 1e-3).collect() } else { analytic.to_vec() };
        let baseline = weighted_sum(&f(x).0, r, 0.0);
        let rep = piecewise_gradcheck(
            |v| {
                let (y, pattern) = f(v);
                (weighted_sum(&y, r, baseline), pattern)
            },
            x,
            &analytic,
            self.epsilon,
            self.sample,
        )?;
        self.cases.push(GradCase {
            target: self.target.name().into(),
            case: case.into(),
            max_rel_err: rep.max_rel_err,
            checked: rep.checked,
            refined: rep.refined,
            passed: rep.max_rel_err < GRAD_TOLERANCE,
        });
        Ok(())
    }

    fn tensor(&mut self, case: &str, x: &VideoTensor<f64>, d_x: &VideoTensor<f64>, r: &[f64], mut f: impl FnMut(&VideoTensor<f64>) -> Probe) -> Result<()> {
        let shape = x.shape();
        self.record(case, x.data(), d_x.data(), r, |v| f(&VideoTensor::new(shape, v.to_vec()).expect("sized")))
    }

    fn params<P: Parameterized<f64> + Clone>(&mut self, case: &str, p: &P, grads: &P, r: &[f64], mut f: impl FnMut(&P) -> Probe) -> Result<()> {
        let mut probe = p.clone();
        self.record(case, &p.flat_params(), &grads.flat_params(), r, |v| {
            probe.set_flat_params(v);
            f(&probe)
        })
    }
}

/// Run every gradient check of `target` with central-difference step `epsilon`.
///
/// Each check compares against the gradient of `sum(r * y)` for a fixed random `r`. With `corrupt`
/// set every analytic gradient is perturbed first, which must make every check fail.
pub fn gradcheck_suite(target: GradTarget, seed: u64, epsilon: f64, corrupt: bool) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ck = Checker { target, epsilon, corrupt, sample: None, cases: Vec::new() };
    match target {
        GradTarget::Ops => ops_checks(&mut ck, &mut rng)?,
        GradTarget::Mvf => mvf_checks(&mut ck, &mut rng)?,
        GradTarget::Block => block_checks(&mut ck, &mut rng, seed)?,
        GradTarget::TinyNet => net_checks(&mut ck, &mut rng, seed)?,
    }
    Ok(ck.cases)
}

fn ops_checks(ck: &mut Checker, rng: &mut ChaCha8Rng) -> Result<()> {
    let shape = Shape::new(2, 3, 4, 4, 4);
    let x = random_tensor(rng, shape);
    let r = random_tensor(rng, shape);
    let r = r.data();

    for axis in Axis::ALL {
        let k = ChannelwiseKernel::new((0..3).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
        let g = conv1d_channelwise_backward(&x, &k, axis, &VideoTensor::new(shape, r.to_vec())?)?;
        let f = |x: &VideoTensor<f64>, k: &ChannelwiseKernel<f64>| smooth(conv1d_channelwise(x, k, axis).expect("shapes").data());
        ck.tensor(&format!("channelwise_{}.input", axis.name()), &x, &g.d_input, r, |v| f(v, &k))?;
        ck.record(&format!("channelwise_{}.kernel", axis.name()), k.flat(), g.d_weights.flat(), r, |v| f(&x, &ChannelwiseKernel::from_flat(v).expect("taps")))?;
    }

    let pw = PointwiseWeights::new(5, 3, gaussian_vec(rng, 15, 0.5), Some(gaussian_vec(rng, 5, 0.5)))?;
    let r5 = random_tensor(rng, shape.with_c(5));
    let g = conv_pointwise_backward(&x, &pw, &r5)?;
    let f = |x: &VideoTensor<f64>, w: &PointwiseWeights<f64>| smooth(conv_pointwise(x, w).expect("shapes").data());
    ck.tensor("pointwise.input", &x, &g.d_input, r5.data(), |v| f(v, &pw))?;
    ck.params("pointwise.weights", &pw, &g.d_weights, r5.data(), |w| f(&x, w))?;

    for stride in [1, 2] {
        let sw = SpatialWeights::new(4, 3, gaussian_vec(rng, 4 * 3 * 9, 0.3))?;
        let o = conv_out_len(4, stride);
        let ro = random_tensor(rng, Shape { c: 4, h: o, w: o, ..shape });
        let g = conv2d_spatial_backward(&x, &sw, stride, &ro)?;
        let f = |x: &VideoTensor<f64>, w: &SpatialWeights<f64>| smooth(conv2d_spatial(x, w, stride).expect("shapes").data());
        ck.tensor(&format!("conv3x3_s{stride}.input"), &x, &g.d_input, ro.data(), |v| f(v, &sw))?;
        ck.params(&format!("conv3x3_s{stride}.weights"), &sw, &g.d_weights, ro.data(), |w| f(&x, w))?;

        let rs = random_tensor(rng, Shape { h: o, w: o, ..shape });
        let d = subsample_spatial_backward(shape, stride, &rs)?;
        ck.tensor(&format!("subsample_s{stride}.input"), &x, &d, rs.data(), |v| smooth(subsample_spatial(v, stride).expect("shapes").data()))?;
    }

    for mode in [NormMode::Train, NormMode::Eval] {
        let mut bn = BatchNorm::new(3);
        randomize(&mut bn, rng);
        bn.running_mean = gaussian_vec(rng, 3, 0.3);
        bn.running_var = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
        let (_, cache) = bn.forward(&x, mode)?;
        let g = bn.backward(&cache, &VideoTensor::new(shape, r.to_vec())?)?;
        let f = |x: &VideoTensor<f64>, bn: &BatchNorm<f64>| smooth(bn.forward(x, mode).expect("shapes").0.data());
        let tag = if mode == NormMode::Train { "train" } else { "eval" };
        ck.tensor(&format!("batchnorm_{tag}.input"), &x, &g.d_input, r, |v| f(v, &bn))?;
        let grads = BatchNorm { gamma: g.d_gamma, beta: g.d_beta, ..bn.clone() };
        ck.params(&format!("batchnorm_{tag}.affine"), &bn, &grads, r, |b| f(&x, b))?;
    }

    // Inputs at least 0.1 away from the kink.
    let xr = x.map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v });
    let d = relu_backward(&xr, &VideoTensor::new(shape, r.to_vec())?)?;
    ck.tensor("relu.input", &xr, &d, r, |v| smooth(relu(v).data()))?;

    let rp = gaussian_vec(rng, 6, 1.0);
    let d = global_avg_pool_backward(shape, &Features::new(2, 3, rp.clone())?)?;
    ck.tensor("global_avg_pool.input", &x, &d, &rp, |v| smooth(&global_avg_pool(v).data))?;

    let feats = Features::new(2, 6, gaussian_vec(rng, 12, 1.0))?;
    let lw = LinearWeights { out_features: 4, in_features: 6, weight: gaussian_vec(rng, 24, 0.5), bias: gaussian_vec(rng, 4, 0.5) };
    let rl = gaussian_vec(rng, 8, 1.0);
    let g = linear_backward(&feats, &lw, &Features::new(2, 4, rl.clone())?)?;
    let f = |x: &Features<f64>, w: &LinearWeights<f64>| smooth(&linear(x, w).expect("shapes").data);
    ck.record("linear.input", &feats.data, &g.d_input.data, &rl, |v| f(&Features::new(2, 6, v.to_vec()).expect("sized"), &lw))?;
    ck.params("linear.weights", &lw, &g.d_weights, &rl, |w| f(&feats, w))?;

    let logits = Features::new(3, 4, gaussian_vec(rng, 12, 1.0))?;
    let labels = [0, 3, 1];
    let (_, d) = softmax_xent(&logits, &labels)?;
    ck.record("softmax_xent.logits", &logits.data, &d.data, &[1.0], |v| {
        smooth(&[softmax_xent(&Features::new(3, 4, v.to_vec()).expect("sized"), &labels).expect("labels").0])
    })?;
    Ok(())
}

fn mvf_checks(ck: &mut Checker, rng: &mut ChaCha8Rng) -> Result<()> {
    let shape = Shape::new(2, 6, 4, 4, 4);
    let cases = [
        ("relu", MvfConfig::with_alpha(0.5)),
        ("identity", MvfConfig { activation: Activation::Identity, ..MvfConfig::with_alpha(0.5) }),
        ("learnable_beta", MvfConfig { learnable_beta: true, ..MvfConfig::with_alpha(0.5).with_betas(0.7, -0.4, 1.3) }),
        ("alpha_1", MvfConfig::with_alpha(1.0).with_betas(1.0, 0.5, 0.25)),
    ];
    for (name, cfg) in cases {
        let x = random_tensor(rng, shape);
        let w = init_gaussian::<f64>(&cfg, shape.c, 0.5, rng.random())?;
        let r = random_tensor(rng, shape);
        let g = mvf_backward(&mvf_forward(&x, &cfg, &w)?, &cfg, &w, &r)?;
        let f = |x: &VideoTensor<f64>, cfg: &MvfConfig, w: &MvfWeights<f64>| {
            let trace = mvf_forward(x, cfg, w).expect("shapes");
            let mut pattern = Vec::new();
            trace.activation_pattern(cfg.activation, &mut pattern);
            (trace.y.data().to_vec(), pattern)
        };
        ck.tensor(&format!("mvf_{name}.input"), &x, &g.d_x, r.data(), |v| f(v, &cfg, &w))?;
        ck.params(&format!("mvf_{name}.kernels"), &w, &g.d_weights, r.data(), |w| f(&x, &cfg, w))?;
        if let Some(db) = g.d_beta {
            ck.record(&format!("mvf_{name}.beta"), &cfg.betas(), &db, r.data(), |b| f(&x, &cfg.with_betas(b[0], b[1], b[2]), &w))?;
        }
    }
    Ok(())
}

/// Coordinates sampled per tensor in the block and network checks.
const SAMPLED_COORDS: usize = 300;

fn block_checks(ck: &mut Checker, rng: &mut ChaCha8Rng, seed: u64) -> Result<()> {
    let cfg = MvfConfig { learnable_beta: true, ..MvfConfig::with_alpha(0.5) };
    ck.sample = Some((SAMPLED_COORDS, seed));
    for (name, c_in, c_out, stride) in [("identity_shortcut", 8, 8, 1), ("projection_s2", 8, 12, 2)] {
        let mut block = BottleneckBlock::<f64>::init(c_in, 4, c_out, stride, Some((cfg, 0.3, rng.random())), false, rng)?;
        randomize(&mut block, rng);
        let x = random_tensor(rng, Shape::new(2, c_in, 3, 6, 6));
        let (y, cache) = block.forward(&x, NormMode::Train)?;
        let r = random_tensor(rng, y.shape());
        let (d_x, grads) = block.backward(&cache, &r)?;
        let f = |x: &VideoTensor<f64>, b: &BottleneckBlock<f64>| {
            let (y, cache) = b.forward(x, NormMode::Train).expect("shapes");
            let mut pattern = Vec::new();
            b.activation_pattern(&cache, &mut pattern);
            (y.data().to_vec(), pattern)
        };
        ck.tensor(&format!("block_{name}.input"), &x, &d_x, r.data(), |v| f(v, &block))?;
        ck.params(&format!("block_{name}.params"), &block, &grads, r.data(), |b| f(&x, b))?;
    }
    ck.sample = None;
    Ok(())
}

fn net_checks(ck: &mut Checker, rng: &mut ChaCha8Rng, seed: u64) -> Result<()> {
    let mut spec = NetworkSpec::new("tiny", 4, &["res3", "res4"], 0.5, 4).with_resolution(16);
    spec.zero_init_residual = false;
    spec.mvf.learnable_beta = true;
    // He-initialised weights as built; the residual branches are live because zero init is off.
    let net = build_network::<f64>(&spec, seed)?;
    let x = random_tensor(rng, net.input_shape(2));
    let (logits, cache) = net.forward(&x, NormMode::Train)?;
    let r = gaussian_vec(rng, logits.data.len(), 1.0);
    let (d_x, grads) = net.backward(&cache, &Features::new(logits.rows, logits.cols, r.clone())?)?;
    let f = |x: &VideoTensor<f64>, n: &crate::net::Network<f64>| {
        let (logits, cache) = n.forward(x, NormMode::Train).expect("shapes");
        (logits.data, n.activation_pattern(&cache))
    };
    ck.sample = Some((SAMPLED_COORDS, seed));
    ck.tensor("tiny_net.input", &x, &d_x, &r, |v| f(v, &net))?;
    ck.params("tiny_net.params", &net, &grads, &r, |n| f(&x, n))?;
    ck.sample = None;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquivKind {
    Tsm,
    C2d,
    Slowonly,
}

impl EquivKind {
    pub const ALL: [EquivKind; 3] = [EquivKind::Tsm, EquivKind::C2d, EquivKind::Slowonly];

    pub fn name(self) -> &'static str {
        match self {
            EquivKind::Tsm => "tsm",
            EquivKind::C2d => "c2d",
            EquivKind::Slowonly => "slowonly",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Random inputs per run: whole networks for c2d, single modules otherwise.
    pub fn default_trials(self) -> usize {
        match self {
            EquivKind::C2d => 20,
            EquivKind::Tsm | EquivKind::Slowonly => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivResult {
    pub which: String,
    pub description: String,
    pub trials: usize,
    pub max_abs_deviation: f64,
    /// Number of comparisons whose outputs were not bitwise identical. Zero padding can produce
    /// `-0.0` where the oracle has `0.0`; only the c2d suite requires this to be zero.
    pub bitwise_mismatches: usize,
    pub passed: bool,
}

fn bits(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

/// Up to `(2, 8, 6, 5, 5)` with a channel count whose quarter rounds to an even number.
fn tsm_shape(rng: &mut impl Rng) -> Shape {
    Shape::new(rng.random_range(1..=2), [6, 7, 8][rng.random_range(0..3)], rng.random_range(1..=6), rng.random_range(1..=5), rng.random_range(1..=5))
}

/// Run one equivalence suite.
pub fn equivalence_suite(which: EquivKind, seed: u64, trials: usize) -> Result<EquivResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = 0.0f64;
    let mut mismatches = 0;
    let mut note = |a: &VideoTensor<f64>, b: &VideoTensor<f64>| -> Result<()> {
        dev = dev.max(a.max_abs_diff(b)?);
        if bits(a.data()) != bits(b.data()) {
            mismatches += 1;
        }
        Ok(())
    };
    let description = match which {
        EquivKind::Tsm => {
            for i in 0..trials {
                let shape = tsm_shape(&mut rng);
                let x = random_tensor(&mut rng, shape);
                let oracle = tsm_shift(&x, 0.25)?;
                if i % 2 == 0 {
                    // Every channel through the module, shifting a quarter of them.
                    let cfg = MvfConfig { activation: Activation::Identity, ..MvfConfig::with_alpha(1.0).with_betas(1.0, 0.0, 0.0) };
                    let w = as_fixed_shift_weights(shape.c, 0.25)?;
                    note(&mvf_forward(&x, &cfg, &w)?.y, &oracle)?;
                } else {
                    // A quarter of the channels through the module, all of them shifted.
                    let cfg = MvfConfig { activation: Activation::Identity, ..MvfConfig::with_alpha(0.25).with_betas(1.0, 0.0, 0.0) };
                    let c1 = cfg.view_channels(shape.c)?;
                    let w = as_fixed_shift_weights(c1, 1.0)?;
                    note(&restore_channel_order(&mvf_forward(&x, &cfg, &w)?.y, c1)?, &oracle)?;
                }
            }
            "fixed-shift MVF (alpha 1 with a 1/4 shift, and alpha 1/4 with a full shift) against the temporal shift oracle"
        }
        EquivKind::C2d => {
            let frames = 4;
            let plain = NetworkSpec::new("tiny", frames, &[], 0.0, 8).with_resolution(16);
            let zero_alpha = NetworkSpec::new("tiny", frames, &["res2", "res3", "res4"], 0.0, 8).with_resolution(16);
            let a = build_network::<f64>(&plain, seed)?;
            let b = build_network::<f64>(&zero_alpha, seed)?;
            for _ in 0..trials {
                let x = random_tensor(&mut rng, a.input_shape(1));
                let la = a.logits(&x)?;
                let lb = b.logits(&x)?;
                let to_t = |f: &Features<f64>| VideoTensor::new(Shape::new(1, f.data.len(), 1, 1, 1), f.data.clone()).expect("sized");
                note(&to_t(&la), &to_t(&lb))?;
                let mut perm: Vec<usize> = (0..frames).collect();
                rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
                note(&to_t(&la), &to_t(&a.logits(&x.permute_frames(&perm)?)?))?;
            }
            "alpha = 0 network logits against the same-seed plain 2D network, and frame-permuted inputs"
        }
        EquivKind::Slowonly => {
            for _ in 0..trials {
                let shape = Shape::new(rng.random_range(1..=2), rng.random_range(1..=6), rng.random_range(2..=6), rng.random_range(1..=5), rng.random_range(1..=5));
                let x = random_tensor(&mut rng, shape);
                let cfg = MvfConfig::with_alpha(1.0).with_betas(1.0, 0.0, 0.0);
                let w = init_gaussian::<f64>(&cfg, shape.c, 0.5, rng.random())?;
                let mut w2 = w.clone();
                for axis in [Axis::Height, Axis::Width] {
                    w2.kernel_mut(axis).flat_mut().iter_mut().for_each(|v| *v = 10.0 * rng.sample::<f64, _>(StandardNormal));
                }
                note(&mvf_forward(&x, &cfg, &w)?.y, &mvf_forward(&x, &cfg, &w2)?.y)?;
            }
            "alpha = 1 with spatial view weights 0: output unchanged under random spatial kernels"
        }
    };
    let passed = dev == 0.0 && (which != EquivKind::C2d || mismatches == 0);
    Ok(EquivResult { which: which.name().into(), description: description.into(), trials, max_abs_deviation: dev, bitwise_mismatches: mismatches, passed })
}
