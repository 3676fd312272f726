//! JSON report documents written by the command-line tool.
//!
//! Every document carries `kind` and `version` and contains no timings, paths of temporary
//! files or other run-dependent data, so two runs with the same inputs serialize to the same
//! bytes. Schemas live in `schemas/` next to the crate manifest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ConfigDocument;
use crate::cost::CostReport;
use crate::train::{EpochRecord, EvalReport};
use crate::verify::{EquivResult, GradCase};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDocument {
    pub kind: String,
    pub version: u32,
    #[serde(flatten)]
    pub report: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckDocument {
    pub kind: String,
    pub version: u32,
    pub targets: Vec<String>,
    pub seed: u64,
    pub tolerance: f64,
    /// Step used by each target, in the order of `targets`.
    pub epsilons: Vec<f64>,
    pub corrupted: bool,
    pub cases: Vec<GradCase>,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivDocument {
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub results: Vec<EquivResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDocument {
    pub kind: String,
    pub version: u32,
    pub config: ConfigDocument,
    pub parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub final_val_acc: f64,
    pub final_val_pair_acc: Option<f64>,
    /// SHA-256 of the saved weight file, hex.
    pub weights_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub kind: String,
    pub version: u32,
    pub config: ConfigDocument,
    pub weights_sha256: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

impl CostDocument {
    pub fn new(report: CostReport) -> Self {
        CostDocument { kind: "cost".into(), version: REPORT_VERSION, report }
    }
}

impl GradcheckDocument {
    pub fn new(targets: Vec<String>, seed: u64, tolerance: f64, epsilons: Vec<f64>, corrupted: bool, cases: Vec<GradCase>) -> Self {
        let max_rel_err = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        let passed = cases.iter().all(|c| c.passed);
        GradcheckDocument { kind: "gradcheck".into(), version: REPORT_VERSION, targets, seed, tolerance, epsilons, corrupted, cases, max_rel_err, passed }
    }
}

impl EquivDocument {
    pub fn new(seed: u64, results: Vec<EquivResult>) -> Self {
        let passed = results.iter().all(|r| r.passed);
        EquivDocument { kind: "equiv".into(), version: REPORT_VERSION, seed, results, passed }
    }
}

/// Hex SHA-256, used to tie reports to the exact weight bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(doc: &T) -> String {
    serde_json::to_string_pretty(doc).expect("report documents serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
