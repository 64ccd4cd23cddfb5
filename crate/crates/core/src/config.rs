//! Run configuration file (TOML). Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskConfig;
use crate::preprocess::PreprocessConfig;
use crate::texture::TvmConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; when set it replaces `mask.seed` and `train.init_seed`.
    pub seed: Option<u64>,
    pub preprocess: PreprocessConfig,
    pub tvm: TvmConfig,
    pub mask: MaskConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::header(origin, "<config>", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn apply_global_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.mask.seed = seed;
            self.train.init_seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.tvm.validate()?;
        self.mask.validate()?;
        self.train.validate()
    }
}
