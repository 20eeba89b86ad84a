//! Run configuration: provider wiring, seeds, thresholds, and artifact
//! paths. Loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::Thresholds;
use crate::providers::mock::MockProvider;
use crate::providers::{http::HttpProvider, ProviderConfig, Providers};
use crate::rilm::Task;

pub const DEFAULT_CHUNK_SIZE: usize = 1500;
pub const DEFAULT_CHUNK_OVERLAP: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderSettings {
    pub mode: ProviderMode,
    #[serde(default = "default_mock_dim")]
    pub mock_dim: usize,
    #[serde(default = "default_mock_feature_dim")]
    pub mock_feature_dim: usize,
    /// Optional fixture-rule JSONL loaded into the mock provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_rules: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<ProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<ProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli: Option<ProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<ProviderConfig>,
}

fn default_mock_dim() -> usize {
    64
}

fn default_mock_feature_dim() -> usize {
    16
}

impl Default for ProviderSettings {
    fn default() -> ProviderSettings {
        ProviderSettings {
            mode: ProviderMode::Mock,
            mock_dim: default_mock_dim(),
            mock_feature_dim: default_mock_feature_dim(),
            mock_rules: None,
            embedder: None,
            generator: None,
            nli: None,
            judge: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Root for all run artifacts (snapshots, deltas, datasets, indexes,
    /// classifier weights, reports). Must exist at run start.
    pub workdir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub providers: ProviderSettings,
}

fn default_seed() -> u64 {
    17
}

fn default_k() -> usize {
    5
}

fn default_lambda() -> f64 {
    2.0
}

fn default_task() -> Task {
    Task::Qa
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}

fn default_chunk_overlap() -> usize {
    DEFAULT_CHUNK_OVERLAP
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&raw)
            .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Every referenced path must exist at run start.
    pub fn validate(&self) -> Result<()> {
        if !self.workdir.is_dir() {
            return Err(Error::Parameter(format!(
                "workdir {} does not exist",
                self.workdir.display()
            )));
        }
        if let Some(rules) = &self.providers.mock_rules {
            if !rules.is_file() {
                return Err(Error::Parameter(format!(
                    "mock_rules {} does not exist",
                    rules.display()
                )));
            }
        }
        if self.chunk_size <= self.chunk_overlap {
            return Err(Error::Parameter(format!(
                "chunk_size {} must exceed chunk_overlap {}",
                self.chunk_size, self.chunk_overlap
            )));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Parameter(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if matches!(self.providers.mode, ProviderMode::Http) {
            for (name, cfg) in [
                ("embedder", &self.providers.embedder),
                ("generator", &self.providers.generator),
                ("nli", &self.providers.nli),
                ("judge", &self.providers.judge),
            ] {
                if cfg.is_none() {
                    return Err(Error::Parameter(format!(
                        "http provider mode requires a [providers.{name}] section"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn build_providers(&self) -> Result<Providers> {
        match self.providers.mode {
            ProviderMode::Mock => {
                let mut mock = MockProvider::new(
                    self.seed,
                    self.providers.mock_dim,
                    self.providers.mock_feature_dim,
                );
                if let Some(rules) = &self.providers.mock_rules {
                    mock.load_rules(rules)?;
                }
                Ok(Providers::mocked(Arc::new(mock)))
            }
            ProviderMode::Http => {
                let feature_dim = self.providers.mock_feature_dim;
                let http = |cfg: &Option<ProviderConfig>| -> Result<Arc<HttpProvider>> {
                    let cfg = cfg
                        .clone()
                        .ok_or_else(|| Error::Parameter("missing provider section".into()))?;
                    Ok(Arc::new(HttpProvider::new(cfg, feature_dim)?))
                };
                Ok(Providers {
                    embedder: http(&self.providers.embedder)?,
                    generator: http(&self.providers.generator)?,
                    nli: http(&self.providers.nli)?,
                    judge: http(&self.providers.judge)?,
                })
            }
        }
    }

    pub fn snapshot_path(&self, epoch: &str) -> PathBuf {
        self.workdir.join("snapshots").join(format!("{epoch}.json"))
    }

    pub fn delta_path(&self, old_epoch: &str, new_epoch: &str) -> PathBuf {
        self.workdir
            .join("deltas")
            .join(format!("{old_epoch}__{new_epoch}.json"))
    }

    pub fn dataset_path(&self, task: Task, epoch: &str) -> PathBuf {
        self.workdir
            .join("datasets")
            .join(format!("{}-{epoch}.jsonl", task.tag()))
    }

    pub fn audit_path(&self, task: Task, epoch: &str) -> PathBuf {
        self.workdir
            .join("datasets")
            .join(format!("{}-{epoch}.audit.jsonl", task.tag()))
    }

    pub fn index_stem(&self, epoch: &str) -> PathBuf {
        self.workdir.join("indexes").join(epoch)
    }

    pub fn classifier_path(&self, task: Task, epoch: &str) -> PathBuf {
        self.workdir
            .join("classifiers")
            .join(format!("{}-{epoch}.clf", task.tag()))
    }

    /// Instance ids consumed by classifier training, excluded at eval time.
    pub fn training_ids_path(&self, task: Task, epoch: &str) -> PathBuf {
        self.workdir
            .join("classifiers")
            .join(format!("{}-{epoch}.train-ids.json", task.tag()))
    }

    pub fn report_path(&self, task: Task, epoch: &str, system: &str) -> PathBuf {
        self.workdir
            .join("reports")
            .join(format!("{}-{epoch}-{system}.json", task.tag()))
    }
}
