//! Analytical multiply-accumulate and parameter accounting.
//!
//! Everything is counted in exact integers and converted to G/M units only for display.
//! Two conventions are available:
//!
//! * [`Convention::Macs`] counts the multiply-accumulates of convolutions, fully connected
//!   layers and MVF channel-wise convolutions.
//! * [`Convention::Table`] additionally charges one operation per output element of every
//!   normalization and every activation that follows a convolution. Pooling, residual adds,
//!   shifts, splits and concatenations stay free. This is the convention under which the
//!   published ResNet and MobileNet-V2 complexity figures are reproduced to within 0.1%.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::net::{BlockKind, NetworkSpec};
use crate::tensor::alpha_channels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Convolution, linear and MVF multiply-accumulates only.
    Macs,
    /// MACs plus one op per normalization and activation output element.
    #[default]
    Table,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Macs => "macs",
            Convention::Table => "table",
        }
    }
}

/// MACs and parameters of a single layer, before any frame scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCost {
    pub macs: u64,
    pub params: u64,
}

/// Dense `k x k` convolution over `t` frames producing `h_out x w_out` maps.
pub fn cost_conv2d(c_in: usize, c_out: usize, k: usize, h_out: usize, w_out: usize, t: usize) -> OpCost {
    let kk = (k * k) as u64;
    OpCost {
        macs: kk * (c_in * c_out) as u64 * (h_out * w_out * t) as u64,
        params: kk * (c_in * c_out) as u64,
    }
}

/// `k x k` depthwise convolution (one filter per channel).
pub fn cost_depthwise(c: usize, k: usize, h_out: usize, w_out: usize, t: usize) -> OpCost {
    let kk = (k * k) as u64;
    OpCost { macs: kk * c as u64 * (h_out * w_out * t) as u64, params: kk * c as u64 }
}

pub fn cost_pointwise(c_in: usize, c_out: usize, h: usize, w: usize, t: usize, bias: bool) -> OpCost {
    let mut c = cost_conv2d(c_in, c_out, 1, h, w, t);
    if bias {
        c.params += c_out as u64;
    }
    c
}

/// Fully connected layer with bias, for a single feature vector.
pub fn cost_linear(in_features: usize, out_features: usize) -> OpCost {
    let w = (in_features * out_features) as u64;
    OpCost { macs: w, params: w + out_features as u64 }
}

/// Three 3-tap channel-wise convolutions over the `round(alpha * c_in)` multi-view channels.
///
/// Split, concat and fusion adds are free.
pub fn cost_mvf_module(c_in: usize, alpha: f64, t: usize, h: usize, w: usize) -> Result<OpCost> {
    let c1 = alpha_channels(alpha, c_in)? as u64;
    Ok(OpCost { macs: 3 * 3 * c1 * (t * h * w) as u64, params: 9 * c1 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub id: String,
    pub kind: String,
    pub macs: u64,
    /// Normalization output elements charged to this layer.
    pub norm_ops: u64,
    /// Activation output elements charged to this layer.
    pub act_ops: u64,
    /// Weights plus normalization scale and shift.
    pub params: u64,
}

impl LayerCost {
    pub fn ops(&self, convention: Convention) -> u64 {
        match convention {
            Convention::Macs => self.macs,
            Convention::Table => self.macs + self.norm_ops + self.act_ops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTotal {
    pub crops: usize,
    pub clips: usize,
    pub views: usize,
    pub per_view_gflops: f64,
    pub total_gflops: f64,
    /// Display form, e.g. `32.9G × 30`.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub backbone: String,
    pub frames: usize,
    pub input_resolution: usize,
    pub classes: usize,
    pub alpha: f64,
    pub mvf_stages: Vec<String>,
    pub mvf_blocks: usize,
    pub convention: Convention,
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    /// Operations under `convention`.
    pub total_ops: u64,
    pub total_params: u64,
    pub total_gmacs: f64,
    /// `total_ops` in units of 10^9; the figure compared against published tables.
    pub total_gflops: f64,
    pub total_mparams: f64,
    pub protocol_total: Option<ProtocolTotal>,
    pub assumptions: Vec<String>,
}

impl CostReport {
    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let stages = if self.mvf_stages.is_empty() { "none".to_string() } else { self.mvf_stages.join(",") };
        out.push_str(&format!(
            "backbone {}  frames {}  resolution {}  classes {}  alpha {}  mvf stages {} ({} blocks)\n",
            self.backbone, self.frames, self.input_resolution, self.classes, self.alpha, stages, self.mvf_blocks
        ));
        out.push_str(&format!("{:<28} {:>10} {:>16} {:>12}\n", "layer", "kind", "ops", "params"));
        for l in &self.per_layer {
            out.push_str(&format!("{:<28} {:>10} {:>16} {:>12}\n", l.id, l.kind, l.ops(self.convention), l.params));
        }
        out.push_str(&format!("total GMACs (conv/fc/mvf only): {:.2}G\n", self.total_gmacs));
        out.push_str(&format!("total GFLOPs ({} convention): {:.2}G\n", self.convention.name(), self.total_gflops));
        out.push_str(&format!("total params: {:.2}M\n", self.total_mparams));
        if let Some(p) = &self.protocol_total {
            out.push_str(&format!(
                "protocol {} crops x {} clips: {} = {:.1}G\n",
                p.crops, p.clips, p.display, p.total_gflops
            ));
        }
        for a in &self.assumptions {
            out.push_str(&format!("note: {a}\n"));
        }
        out
    }
}

struct Builder {
    t: usize,
    layers: Vec<LayerCost>,
}

impl Builder {
    /// Convolution followed by normalization and (optionally) an activation.
    fn conv(&mut self, id: String, op: OpCost, c_out: usize, h: usize, w: usize, act: bool) {
        let elems = (c_out * h * w * self.t) as u64;
        self.layers.push(LayerCost {
            id,
            kind: "conv".into(),
            macs: op.macs,
            norm_ops: elems,
            act_ops: if act { elems } else { 0 },
            params: op.params + 2 * c_out as u64,
        });
    }
}

fn out_len(len: usize, k: usize, stride: usize) -> usize {
    (len + 2 * (k / 2) - k) / stride + 1
}

/// Cost of one clip of `spec.frames` frames at `spec.input_resolution`².
pub fn cost_network(spec: &NetworkSpec, convention: Convention) -> Result<CostReport> {
    let bb = spec.resolve()?;
    let t = spec.frames;
    let mut b = Builder { t, layers: Vec::new() };
    let mut assumptions = Vec::new();
    let alpha = spec.mvf.alpha;

    let mut h = out_len(spec.input_resolution, bb.stem.kernel, bb.stem.stride);
    let mut c = bb.stem.channels;
    b.conv("stem.conv".into(), cost_conv2d(bb.in_channels, c, bb.stem.kernel, h, h, t), c, h, h, true);
    if bb.stem.max_pool {
        h = out_len(h, 3, 2);
    }

    for stage in &bb.stages {
        let with_mvf = spec.has_mvf(&stage.name);
        for i in 0..stage.blocks {
            let id = format!("{}.{i}", stage.name);
            let c_in = stage.block_in_channels(i);
            let stride = stage.block_stride(i);
            let ho = out_len(h, 3, stride);
            if with_mvf && alpha > 0.0 {
                let m = cost_mvf_module(c_in, alpha, t, h, h)?;
                b.layers.push(LayerCost { id: format!("{id}.mvf"), kind: "mvf".into(), macs: m.macs, norm_ops: 0, act_ops: 0, params: m.params });
            }
            match stage.kind {
                BlockKind::Bottleneck => {
                    let mid = stage.bottleneck_channels;
                    b.conv(format!("{id}.conv1"), cost_pointwise(c_in, mid, h, h, t, false), mid, h, h, true);
                    b.conv(format!("{id}.conv2"), cost_conv2d(mid, mid, 3, ho, ho, t), mid, ho, ho, true);
                    // The activation after the residual add is charged to the expanding conv.
                    b.conv(format!("{id}.conv3"), cost_pointwise(mid, stage.out_channels, ho, ho, t, false), stage.out_channels, ho, ho, true);
                    if c_in != stage.out_channels || stride != 1 {
                        let proj = cost_pointwise(c_in, stage.out_channels, ho, ho, t, false);
                        b.conv(format!("{id}.proj"), proj, stage.out_channels, ho, ho, false);
                    }
                }
                BlockKind::InvertedResidual { expansion } => {
                    let hidden = c_in * expansion;
                    if expansion != 1 {
                        b.conv(format!("{id}.expand"), cost_pointwise(c_in, hidden, h, h, t, false), hidden, h, h, true);
                    }
                    b.conv(format!("{id}.dw"), cost_depthwise(hidden, 3, ho, ho, t), hidden, ho, ho, true);
                    b.conv(format!("{id}.project"), cost_pointwise(hidden, stage.out_channels, ho, ho, t, false), stage.out_channels, ho, ho, false);
                }
            }
            h = ho;
        }
        c = stage.out_channels;
    }
    if let Some(head) = bb.head_conv {
        b.conv("head.conv".into(), cost_pointwise(c, head, h, h, t, false), head, h, h, true);
        c = head;
    }
    let fc = cost_linear(c, spec.classes);
    // The classifier runs once per frame before temporal averaging, as in the 2D backbone.
    b.layers.push(LayerCost { id: "fc".into(), kind: "fc".into(), macs: fc.macs * t as u64, norm_ops: 0, act_ops: 0, params: fc.params });

    if matches!(bb.stages.first().map(|s| s.kind), Some(BlockKind::InvertedResidual { .. })) && spec.mvf.alpha > 0.0 && !spec.mvf_stages.is_empty() {
        assumptions.push("MVF placement inside MobileNet-V2 blocks is an assumption (before the first convolution of each block)".into());
    }
    if convention == Convention::Table {
        assumptions.push("table convention: one op per normalization and activation output element on top of MACs".into());
    }

    let total_macs: u64 = b.layers.iter().map(|l| l.macs).sum();
    let total_ops: u64 = b.layers.iter().map(|l| l.ops(convention)).sum();
    let total_params: u64 = b.layers.iter().map(|l| l.params).sum();
    let mvf_blocks = spec.mvf_block_count()?;
    Ok(CostReport {
        backbone: bb.name.clone(),
        frames: t,
        input_resolution: spec.input_resolution,
        classes: spec.classes,
        alpha,
        mvf_stages: spec.mvf_stages.clone(),
        mvf_blocks,
        convention,
        per_layer: b.layers,
        total_macs,
        total_ops,
        total_params,
        total_gmacs: total_macs as f64 / 1e9,
        total_gflops: total_ops as f64 / 1e9,
        total_mparams: total_params as f64 / 1e6,
        protocol_total: None,
        assumptions,
    })
}

/// Multiply the single-view cost by the number of evaluated views (crops x clips).
pub fn cost_protocol(report: &CostReport, crops: usize, clips: usize) -> Result<ProtocolTotal> {
    if crops == 0 || clips == 0 {
        return domain_err(format!("crops and clips must be >= 1 (got {crops} x {clips})"));
    }
    let views = crops * clips;
    let per_view = report.total_gflops;
    Ok(ProtocolTotal {
        crops,
        clips,
        views,
        per_view_gflops: per_view,
        total_gflops: per_view * views as f64,
        display: format!("{per_view:.1}G × {views}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gflops(backbone: &str, frames: usize, stages: &[&str], alpha: f64) -> f64 {
        cost_network(&NetworkSpec::new(backbone, frames, stages, alpha, 400), Convention::Table).unwrap().total_gflops
    }

    #[test]
    fn counting_rules() {
        assert_eq!(cost_conv2d(1, 1, 1, 1, 1, 1).macs, 1);
        assert_eq!(cost_conv2d(64, 64, 3, 56, 56, 1).macs, 115_605_504);
        assert_eq!(cost_linear(2048, 400).params, 819_600);
        assert_eq!(cost_mvf_module(1024, 0.5, 8, 14, 14).unwrap(), OpCost { macs: 7_225_344, params: 4_608 });
        assert_eq!(cost_mvf_module(1024, 0.0, 8, 14, 14).unwrap(), OpCost::default());
    }

    #[test]
    fn resnet_tables() {
        for (got, want) in [
            (gflops("r50", 8, &[], 0.0), 32.88),
            (gflops("r50", 4, &[], 0.0), 16.44),
            (gflops("r101", 4, &["res4", "res5"], 0.125), 31.36),
            (gflops("mobilenet_v2", 4, &[], 0.0), 1.25),
        ] {
            assert!((got / want - 1.0).abs() < 0.005, "{got} vs {want}");
        }
    }

    #[test]
    fn totals_are_layer_sums() {
        let r = cost_network(&NetworkSpec::new("r50", 8, &["res4", "res5"], 0.5, 400), Convention::Macs).unwrap();
        assert_eq!(r.total_macs, r.per_layer.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.total_ops, r.total_macs);
        assert_eq!(r.mvf_blocks, 9);
    }
}
