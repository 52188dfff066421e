use std::fs;
use std::path::Path;

use emarch_core::dsp::PreprocessConfig;
use emarch_core::nn::TrainConfig;
use emarch_core::simulator::{EmModel, SimConfig};
use serde::{Deserialize, Serialize};

use crate::{CliResult, Tag};

/// Contents of a `--config` file. Section names and keys mirror the library
/// structs; missing sections and keys take the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub em_model: EmModel,
    pub sim_config: SimConfig,
    pub train_config: TrainConfig,
    pub preprocess: PreprocessConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).data("parsing config")?;
        cfg.em_model.validate().data("em_model")?;
        cfg.sim_config.validate().data("sim_config")?;
        cfg.train_config.validate().data("train_config")?;
        cfg.preprocess.validate().data("preprocess")?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).data(format!("reading {}", p.display()))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
