use mvfnet::cost::{cost_network, cost_protocol, Convention, CostReport};
use mvfnet::mvf::{as_fixed_shift_weights, mvf_forward, tsm_shift, Activation, MvfConfig, MvfWeights};
use mvfnet::net::NetworkSpec;
use mvfnet::ops::ChannelwiseKernel;
use mvfnet::train::{gen_clip, item_rng, SyntheticTask};
use mvfnet::{Error, Result, Shape, VideoTensor};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Views {
    pub class_name: String,
    pub frames: usize,
    pub size: usize,
    /// Frame-major `frames x size x size` maps.
    pub input: Vec<f64>,
    pub temporal: Vec<f64>,
    pub height: Vec<f64>,
    pub width: Vec<f64>,
    /// After the weighted sum and ReLU.
    pub fused: Vec<f64>,
}

const CLASS_NAMES: [&str; 8] = ["left", "left reversed", "right", "right reversed", "up", "up reversed", "down", "down reversed"];

/// One FullEight clip through a single-channel module whose three kernels are central
/// differences: the temporal view lights up where the square is arriving or leaving, the
/// spatial views mark its vertical and horizontal edges.
pub fn views(class_id: usize, seed: u64, betas: [f64; 3]) -> Result<Views> {
    let task = SyntheticTask::full_eight();
    let (clip, _) = gen_clip::<f64>(&task, class_id, &mut item_rng(seed, class_id as u64))?;
    let diff = ChannelwiseKernel::uniform(1, [-1.0, 0.0, 1.0]);
    let weights = MvfWeights::new(diff.clone(), diff.clone(), diff)?;
    let cfg = MvfConfig { alpha: 1.0, activation: Activation::Relu, ..MvfConfig::default() }.with_betas(betas[0], betas[1], betas[2]);
    let trace = mvf_forward(&clip, &cfg, &weights)?;
    let scaled = |t: &VideoTensor<f64>, b: f64| t.data().iter().map(|v| v * b).collect();
    Ok(Views {
        class_name: CLASS_NAMES[class_id].into(),
        frames: task.frames,
        size: task.resolution,
        input: clip.data().to_vec(),
        temporal: scaled(&trace.o_t, betas[0]),
        height: scaled(&trace.o_h, betas[1]),
        width: scaled(&trace.o_w, betas[2]),
        fused: trace.y.data().to_vec(),
    })
}

pub fn cost(backbone: &str, frames: usize, alpha: f64, stages: &str, classes: usize, crops: usize, clips: usize) -> Result<CostReport> {
    let stages: Vec<&str> = stages.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none").collect();
    let resolution = if backbone == "tiny" { 32 } else { 224 };
    let spec = NetworkSpec::new(backbone, frames, &stages, alpha, classes).with_resolution(resolution);
    let mut report = cost_network(&spec, Convention::Table)?;
    if crops > 0 && clips > 0 {
        report.protocol_total = Some(cost_protocol(&report, crops, clips)?);
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct ShiftGrid {
    pub channels: usize,
    pub frames: usize,
    /// Channels shifted in each direction.
    pub fold: usize,
    /// Channel-major `channels x frames` labels; zero marks a zero-filled slot.
    pub input: Vec<f64>,
    pub shifted: Vec<f64>,
    pub module: Vec<f64>,
    /// Temporal taps `[k(-1), k(0), k(+1)]` per channel.
    pub taps: Vec<[f64; 3]>,
    pub identical: bool,
}

pub fn shift(channels: usize, frames: usize, fraction: f64) -> Result<ShiftGrid> {
    if channels == 0 || frames == 0 || channels > 64 || frames > 32 {
        return Err(Error::Domain("use 1..=64 channels and 1..=32 frames".into()));
    }
    let x = VideoTensor::from_fn(Shape::new(1, channels, frames, 1, 1), |_, c, t, _, _| (c * frames + t + 1) as f64);
    let shifted = tsm_shift(&x, fraction)?;
    let weights = as_fixed_shift_weights::<f64>(channels, fraction)?;
    let cfg = MvfConfig { alpha: 1.0, activation: Activation::Identity, ..MvfConfig::default() }.with_betas(1.0, 0.0, 0.0);
    let module = mvf_forward(&x, &cfg, &weights)?.y;
    Ok(ShiftGrid {
        channels,
        frames,
        fold: mvfnet::mvf::shift_fold(channels, fraction)?,
        input: x.data().to_vec(),
        identical: module.data() == shifted.data(),
        shifted: shifted.into_data(),
        module: module.into_data(),
        taps: weights.k_t.taps().to_vec(),
    })
}
