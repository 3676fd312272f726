//! Backbone descriptions, presets, and executable networks built from them.

mod network;

pub use network::{build_network, Network, NetworkCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvf::MvfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// ResNet bottleneck: 1x1 reduce, 3x3 (carries the stride), 1x1 expand.
    Bottleneck,
    /// MobileNet-V2 inverted residual: 1x1 expand, 3x3 depthwise, 1x1 linear projection.
    InvertedResidual { expansion: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    /// 3x3 stride-2 max pooling after the stem convolution.
    pub max_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub kind: BlockKind,
    pub blocks: usize,
    pub in_channels: usize,
    /// Width of the 3x3 stage of a bottleneck (unused for inverted residuals).
    pub bottleneck_channels: usize,
    pub out_channels: usize,
    /// Applied by the first block of the stage.
    pub spatial_stride: usize,
}

impl StageSpec {
    /// Input channels of block `i` within the stage.
    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.out_channels
        }
    }

    pub fn block_stride(&self, i: usize) -> usize {
        if i == 0 {
            self.spatial_stride
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub in_channels: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    /// Optional 1x1 convolution before pooling (MobileNet-V2's 1280-wide layer).
    pub head_conv: Option<usize>,
}

impl BackboneSpec {
    pub fn feature_channels(&self) -> usize {
        self.head_conv.unwrap_or_else(|| self.stages.last().map_or(self.stem.channels, |s| s.out_channels))
    }

    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Whether [`build_network`] can instantiate weights for this backbone.
    pub fn is_executable(&self) -> bool {
        self.stem.kernel == 3
            && !self.stem.max_pool
            && self.head_conv.is_none()
            && self.stages.iter().all(|s| s.kind == BlockKind::Bottleneck)
    }
}

fn resnet(name: &str, blocks: [usize; 4]) -> BackboneSpec {
    let widths = [(64, 64, 256, 1), (256, 128, 512, 2), (512, 256, 1024, 2), (1024, 512, 2048, 2)];
    let stages = blocks
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(i, (&blocks, (cin, mid, cout, stride)))| StageSpec {
            name: format!("res{}", i + 2),
            kind: BlockKind::Bottleneck,
            blocks,
            in_channels: cin,
            bottleneck_channels: mid,
            out_channels: cout,
            spatial_stride: stride,
        })
        .collect();
    BackboneSpec {
        name: name.into(),
        in_channels: 3,
        stem: StemSpec { kernel: 7, stride: 2, channels: 64, max_pool: true },
        stages,
        head_conv: None,
    }
}

fn mobilenet_v2() -> BackboneSpec {
    // (expansion, out channels, blocks, stride) of the standard inverted-residual table.
    let table = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    let mut cin = 32;
    let stages = table
        .iter()
        .enumerate()
        .map(|(i, &(expansion, cout, blocks, stride))| {
            let stage = StageSpec {
                name: format!("ir{}", i + 1),
                kind: BlockKind::InvertedResidual { expansion },
                blocks,
                in_channels: cin,
                bottleneck_channels: cin * expansion,
                out_channels: cout,
                spatial_stride: stride,
            };
            cin = cout;
            stage
        })
        .collect();
    BackboneSpec {
        name: "mobilenet_v2".into(),
        in_channels: 3,
        stem: StemSpec { kernel: 3, stride: 2, channels: 32, max_pool: false },
        stages,
        head_conv: Some(1280),
    }
}

fn tiny() -> BackboneSpec {
    let widths = [(16, 8, 16, 1), (16, 8, 32, 2), (32, 16, 64, 2)];
    let stages = widths
        .iter()
        .enumerate()
        .map(|(i, &(cin, mid, cout, stride))| StageSpec {
            name: format!("res{}", i + 2),
            kind: BlockKind::Bottleneck,
            blocks: 2,
            in_channels: cin,
            bottleneck_channels: mid,
            out_channels: cout,
            spatial_stride: stride,
        })
        .collect();
    BackboneSpec {
        name: "tiny".into(),
        in_channels: 1,
        stem: StemSpec { kernel: 3, stride: 2, channels: 16, max_pool: false },
        stages,
        head_conv: None,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["r50", "r101", "mobilenet_v2", "tiny"];

pub fn preset(name: &str) -> Result<BackboneSpec> {
    match name {
        "r50" => Ok(resnet("r50", [3, 4, 6, 3])),
        "r101" => Ok(resnet("r101", [3, 4, 23, 3])),
        "mobilenet_v2" => Ok(mobilenet_v2()),
        "tiny" => Ok(tiny()),
        other => Err(Error::Config(format!(
            "unknown backbone '{other}' (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

fn default_frames() -> usize {
    8
}
fn default_classes() -> usize {
    400
}
fn default_resolution() -> usize {
    224
}
fn default_init_std() -> f64 {
    crate::mvf::DEFAULT_INIT_STD
}
fn default_true() -> bool {
    true
}

/// Declarative network: backbone preset, clip geometry, and where MVF modules go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub backbone: String,
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Stages whose every block gets an MVF module before its first convolution.
    #[serde(default)]
    pub mvf_stages: Vec<String>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_resolution")]
    pub input_resolution: usize,
    #[serde(default)]
    pub mvf: MvfConfig,
    #[serde(default = "default_init_std")]
    pub mvf_init_std: f64,
    /// Start every residual branch at zero by zeroing its last norm scale.
    #[serde(default = "default_true")]
    pub zero_init_residual: bool,
}

impl NetworkSpec {
    pub fn new(backbone: &str, frames: usize, mvf_stages: &[&str], alpha: f64, classes: usize) -> Self {
        NetworkSpec {
            backbone: backbone.into(),
            frames,
            mvf_stages: mvf_stages.iter().map(|s| s.to_string()).collect(),
            classes,
            input_resolution: default_resolution(),
            mvf: MvfConfig::with_alpha(alpha),
            mvf_init_std: default_init_std(),
            zero_init_residual: true,
        }
    }

    pub fn with_resolution(self, input_resolution: usize) -> Self {
        NetworkSpec { input_resolution, ..self }
    }

    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        preset(&self.backbone)
    }

    /// Validate against the backbone and return it.
    pub fn resolve(&self) -> Result<BackboneSpec> {
        let bb = self.backbone_spec()?;
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if self.classes == 0 || self.input_resolution == 0 {
            return Err(Error::Config("classes and input_resolution must be >= 1".into()));
        }
        for s in &self.mvf_stages {
            if bb.stage(s).is_none() {
                let names: Vec<&str> = bb.stages.iter().map(|s| s.name.as_str()).collect();
                return Err(Error::Config(format!("backbone {} has no stage '{s}' (stages: {})", bb.name, names.join(", "))));
            }
        }
        self.mvf.validate()?;
        Ok(bb)
    }

    pub fn has_mvf(&self, stage: &str) -> bool {
        self.mvf_stages.iter().any(|s| s == stage)
    }

    /// Number of blocks that receive an MVF module.
    pub fn mvf_block_count(&self) -> Result<usize> {
        let bb = self.resolve()?;
        Ok(bb.stages.iter().filter(|s| self.has_mvf(&s.name)).map(|s| s.blocks).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_block_counts() {
        let counts = |name: &str| preset(name).unwrap().stages.iter().map(|s| s.blocks).collect::<Vec<_>>();
        assert_eq!(counts("r50"), vec![3, 4, 6, 3]);
        assert_eq!(counts("r101"), vec![3, 4, 23, 3]);
        assert_eq!(preset("tiny").unwrap().total_blocks(), 6);
        assert!(preset("vgg").is_err());
    }

    #[test]
    fn mvf_blocks_per_stage_set() {
        let count = |stages: &[&str]| NetworkSpec::new("r50", 8, stages, 0.5, 400).mvf_block_count().unwrap();
        assert_eq!(count(&["res5"]), 3);
        assert_eq!(count(&["res4", "res5"]), 9);
        assert_eq!(count(&["res3", "res4", "res5"]), 13);
        assert_eq!(count(&["res2", "res3", "res4", "res5"]), 16);
        assert_eq!(count(&[]), 0);
        assert!(NetworkSpec::new("r50", 8, &["res9"], 0.5, 400).resolve().is_err());
    }

    #[test]
    fn only_small_bottleneck_presets_execute() {
        assert!(preset("tiny").unwrap().is_executable());
        for name in ["r50", "r101", "mobilenet_v2"] {
            assert!(!preset(name).unwrap().is_executable());
        }
    }
}
