use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use delta_core::data::SyntheticSpec;
use delta_core::model::ModelConfig;
use delta_core::trainer::TrainerConfig;

use crate::UsageError;

/// Planted-interaction data generated on the fly instead of a prepped cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_fields: usize,
    pub n_informative: usize,
    pub vocab_size: usize,
    pub n_rows: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_fields: 10,
            n_informative: 2,
            vocab_size: 10,
            n_rows: 5_000,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec::new(self.n_fields, self.n_informative, self.vocab_size, self.n_rows, self.seed)
    }
}

/// Where training data comes from. Exactly one of the two must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset cache written by `prep`.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cache: None,
            synthetic: Some(SyntheticConfig::default()),
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `vocab_sizes` may be left empty; it is filled in from the data.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            data: DataConfig::default(),
            seed: default_seed(),
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data and output paths are taken
    /// relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(cache) = &mut cfg.data.cache {
            if cache.is_relative() {
                *cache = base.join(&*cache);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        match (&self.data.cache, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => bail!(UsageError(
                "config: data needs exactly one of `cache` or `synthetic`".into()
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
