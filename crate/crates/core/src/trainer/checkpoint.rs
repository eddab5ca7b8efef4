//! Checkpoint files: JSON with every float stored as a shortest round-trip
//! decimal string, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answer::AnswerLabel;
use crate::error::{io_err, Error, Result};
use crate::policy::PolicyParams;

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    /// Shape descriptor: answer classes; the feature and length dimensions
    /// are fixed by the policy.
    pub labels: Vec<AnswerLabel>,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub t: u64,
    pub m: Vec<String>,
    pub v: Vec<String>,
}

/// Every random draw derives from `(seed, step, ...)`, so the stream state is
/// fully described by the seed and the next step to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub next_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub mode: String,
    pub step: usize,
    pub params: ParamBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ParamBlock>,
    pub optimizer_state: OptimizerBlock,
    pub rng_state: RngState,
    pub config_digest: String,
}

pub fn encode_floats(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:?}")).collect()
}

pub fn decode_floats(values: &[String]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("checkpoint float `{s}` does not parse")))
        })
        .collect()
}

impl ParamBlock {
    pub fn from_params(params: &PolicyParams) -> Self {
        ParamBlock {
            labels: params.labels.clone(),
            values: encode_floats(&params.flat()),
        }
    }

    pub fn to_params(&self) -> Result<PolicyParams> {
        let k = self.labels.len();
        let mut params = PolicyParams {
            labels: self.labels.clone(),
            weights: vec![0.0; k * crate::policy::FEATURE_DIM],
            bias: vec![0.0; k],
            length_logits: [0.0; crate::policy::LENGTH_BUCKETS],
        };
        params.set_flat(&decode_floats(&self.values)?)?;
        params.validate()?;
        Ok(params)
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }

    /// Reads a checkpoint and checks its format version.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION.into(),
            });
        }
        Ok(ckpt)
    }

    pub fn check_digest(&self, expected: &str) -> Result<()> {
        if self.config_digest != expected {
            return Err(Error::DigestMismatch {
                found: self.config_digest.clone(),
                expected: expected.into(),
            });
        }
        Ok(())
    }
}
