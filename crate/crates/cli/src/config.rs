use std::fs;
use std::path::{Path, PathBuf};

use ngpq::ddpg::DdpgConfig;
use ngpq::ngp::{NgpConfig, TrainOptions};
use ngpq::search::SearchConfig;
use ngpq::sim::HwConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Oracle model, its training target and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Binary PPM target. Without one, a `width x height` checkerboard with
    /// `cell`-pixel squares is used.
    pub image: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub cell: usize,
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub log_every: usize,
    pub model: NgpConfig,
}

impl Default for OracleSection {
    fn default() -> Self {
        let train = TrainOptions::default();
        Self {
            image: None,
            width: 128,
            height: 128,
            cell: 8,
            steps: train.steps,
            seed: train.seed,
            batch_size: train.batch_size,
            log_every: train.log_every,
            model: NgpConfig::default(),
        }
    }
}

/// Everything one pipeline run needs. Each TOML table maps to one field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub oracle: OracleSection,
    pub hardware: HwConfig,
    pub agent: DdpgConfig,
    pub search: SearchConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path`; relative paths inside it are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if config.search.agent != DdpgConfig::default() {
            return Err(CliError::Usage(
                "agent settings belong in the [agent] table".into(),
            ));
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        if let Some(image) = &config.oracle.image {
            config.oracle.image = Some(dir.join(image));
        }
        if let Some(out) = &config.out_dir {
            config.out_dir = Some(dir.join(out));
        }
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.oracle.seed = seed;
        self.search.seed = seed;
    }

    /// The search settings with the `[agent]` table folded in.
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            agent: self.agent.clone(),
            ..self.search.clone()
        }
    }

    /// Options for training the oracle from scratch.
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.oracle.steps,
            seed: self.oracle.seed,
            batch_size: self.oracle.batch_size,
            log_every: self.oracle.log_every,
            ..TrainOptions::default()
        }
    }

    /// Options for quantization-aware fine-tuning during the search.
    pub fn finetune_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.search.seed,
            log_every: 0,
            ..self.train_options()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.oracle.model.validate().map_err(|e| usage(&e))?;
        self.hardware.validate().map_err(|e| usage(&e))?;
        self.search_config().validate().map_err(|e| usage(&e))?;
        let o = &self.oracle;
        if let Some(image) = &o.image {
            if !image.is_file() {
                return Err(CliError::Usage(format!(
                    "image not found: {}",
                    image.display()
                )));
            }
        } else if o.width == 0 || o.height == 0 || o.cell == 0 {
            return Err(CliError::Usage(
                "oracle width, height and cell must be >= 1".into(),
            ));
        }
        if o.batch_size == 0 {
            return Err(CliError::Usage("oracle batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
