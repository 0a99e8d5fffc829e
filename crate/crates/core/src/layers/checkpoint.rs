use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchNormStats, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "zdgan-network";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: spec, build seed, parameters and batch-norm state.
///
/// Stored as JSON; floats are written in shortest round-trip form, so a
/// save/load cycle reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub params: Vec<Tensor>,
    pub batchnorm: Vec<BatchNormStats>,
}

impl Checkpoint {
    pub(super) fn from_network(net: &Network) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: net.seed,
            spec: net.spec.clone(),
            params: net.params.clone(),
            batchnorm: net.bn_stats.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
