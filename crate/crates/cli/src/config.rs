//! Pipeline configuration: one TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use gifguard_core::augment::AugmentParams;
use gifguard_core::model::ClassifierSpec;
use gifguard_core::preprocess::PreprocessConfig;
use gifguard_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectSection {
    pub seeds_file: Option<PathBuf>,
    pub per_seed_limit: usize,
    pub parallelism: usize,
    pub requests_per_second: u32,
    pub base_url: String,
    /// `live`, `record` or `replay`.
    pub fixtures: String,
    pub fixtures_dir: Option<PathBuf>,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection {
            seeds_file: None,
            per_seed_limit: 100,
            parallelism: 4,
            requests_per_second: 4,
            base_url: gifguard_ingest::client::DEFAULT_BASE_URL.to_string(),
            fixtures: "live".into(),
            fixtures_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub addr: String,
    pub assignments: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { addr: "127.0.0.1:8080".into(), assignments: None, static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data_root: PathBuf,
    pub run_dir: PathBuf,
    /// Master seed; it is copied into every stochastic stage.
    pub seed: u64,
    /// Backbone weights: a safetensors path, a registry name, or `seeded:<n>`.
    pub weights: String,
    /// JSON Lines of `{gif_id, content_category}`.
    pub category_overrides: Option<PathBuf>,
    pub collect: CollectSection,
    pub serve: ServeSection,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentParams,
    pub model: ClassifierSpec,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_root: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
            seed: 0,
            weights: gifguard_core::model::REGISTRY_VGG16.to_string(),
            category_overrides: None,
            collect: CollectSection::default(),
            serve: ServeSection::default(),
            preprocess: PreprocessConfig::default(),
            augment: AugmentParams::default(),
            model: ClassifierSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Loads the file named by `--config` (if any) and applies the common
    /// flags on top.
    pub fn resolve(common: &CommonArgs) -> Result<Self, CliError> {
        let mut config = match &common.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(d) = &common.data_root {
            config.data_root = d.clone();
        }
        if let Some(d) = &common.run_dir {
            config.run_dir = d.clone();
        }
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        config.sync_seeds();
        Ok(config)
    }

    /// Copies the master seed into the stage configs.
    pub fn sync_seeds(&mut self) {
        self.train.seed = self.seed;
        self.augment.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.preprocess.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.augment.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let config = PipelineConfig::from_toml(
            "seed = 3\n[train]\nepochs = 7\n[preprocess]\nframe_cap = 8\n[model]\ninput_side = 64\n",
        )
        .unwrap();
        assert_eq!(config.train.epochs, 7);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.preprocess.frame_cap, 8);
        assert_eq!(config.preprocess.hash_bits, 64);
        assert_eq!(config.model.input_side, 64);
        assert_eq!(config.model.head_units, 256);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\ndata_root = \"from_file\"\nrun_dir = \"runs/file\"\n").unwrap();
        let common = CommonArgs { config: Some(path), data_root: Some("from_flag".into()), run_dir: None, seed: Some(9) };
        let config = PipelineConfig::resolve(&common).unwrap();
        assert_eq!(config.data_root, PathBuf::from("from_flag"));
        assert_eq!(config.run_dir, PathBuf::from("runs/file"));
        assert_eq!((config.seed, config.train.seed, config.augment.seed), (9, 9, 9));
    }

    #[test]
    fn roundtrips_and_rejects_typos_in_values() {
        let config = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&config.to_toml()).unwrap(), config);
        assert!(PipelineConfig::from_toml("[train]\nepochs = \"many\"\n").is_err());
    }
}
