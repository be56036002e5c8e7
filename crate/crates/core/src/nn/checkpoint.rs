use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, Model, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Versioned JSON model snapshot.
///
/// Layers carry their own kind tag and parameter arrays; batchnorm layers
/// include running statistics. Values are written with shortest round-trip
/// formatting, so `load(save(m))` reproduces `m` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Checkpoint {
    pub fn new(model: &Model, train_config: Option<TrainConfig>, seed: Option<u64>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layers: model.layers().to_vec(),
            train_config,
            seed,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_layers(self.layers.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion(ck.format_version));
        }
        // Validates shapes and composition.
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
