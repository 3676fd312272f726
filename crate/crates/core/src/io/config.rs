//! Strict JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvf::MvfConfig;
use crate::net::NetworkSpec;
use crate::train::{EvalProtocol, SyntheticTask, TrainConfig};

/// The `network` section: every [`NetworkSpec`] field except the MVF settings, which have
/// their own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub backbone: String,
    pub frames: usize,
    pub mvf_stages: Vec<String>,
    pub classes: usize,
    pub input_resolution: usize,
    pub mvf_init_std: f64,
    pub zero_init_residual: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            backbone: "tiny".into(),
            frames: 8,
            mvf_stages: vec!["res2".into(), "res3".into()],
            classes: 8,
            input_resolution: 32,
            mvf_init_std: crate::mvf::DEFAULT_INIT_STD,
            zero_init_residual: true,
        }
    }
}

/// A complete experiment. Every section and field is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigDocument {
    pub network: NetworkSection,
    pub mvf: MvfConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
    pub task: SyntheticTask,
}

impl ConfigDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ConfigDocument = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let n = &self.network;
        NetworkSpec {
            backbone: n.backbone.clone(),
            frames: n.frames,
            mvf_stages: n.mvf_stages.clone(),
            classes: n.classes,
            input_resolution: n.input_resolution,
            mvf: self.mvf,
            mvf_init_std: n.mvf_init_std,
            zero_init_residual: n.zero_init_residual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // A bad value in a config file is a config error, whatever layer notices it.
        self.network_spec().resolve().map_err(|e| match e {
            Error::Domain(m) => Error::Config(m),
            other => other,
        })?;
        self.train.validate()?;
        self.task.validate()?;
        self.eval.validate()?;
        if self.network.mvf_init_std <= 0.0 {
            return Err(Error::Config("network.mvf_init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_strictness() {
        let doc = ConfigDocument::from_json("{}").unwrap();
        assert_eq!(doc, ConfigDocument::default());
        assert_eq!(ConfigDocument::from_json(&doc.to_json()).unwrap(), doc);
        for bad in [
            r#"{"netwrok": {}}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"mvf": {"alpha": 2.0}}"#,
            r#"{"network": {"backbone": "vgg"}}"#,
            r#"{"train": {"decay_epochs": [5, 3]}}"#,
        ] {
            assert!(matches!(ConfigDocument::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
