//! Run configuration. Keys follow the hyperparameter table of the model
//! (seed, epochs, patience, batch size, learning rate, primary metric,
//! hidden/output/feature dimensions) plus task, data and output paths.

use std::path::{Path, PathBuf};

use aicare_core::model::ModelHyper;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mortality,
    Preterm,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mortality => "mortality",
            Task::Preterm => "preterm",
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    42
}
fn default_metric() -> String {
    "AUPRC".into()
}
fn default_output_dim() -> usize {
    1
}
fn default_heads() -> usize {
    4
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_folds() -> usize {
    10
}
fn default_beta() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    365.0
}
fn default_preterm_week() -> f64 {
    37.0
}
fn default_window() -> f64 {
    300.0
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Directory with `visits.csv`, `static.csv` and `schema.json`.
    pub data_dir: PathBuf,
    /// Overrides the data directory's `schema.json`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_metric")]
    pub primary_metric: String,
    pub hidden_dim: usize,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    pub dynamic_feature_dim: usize,
    pub static_feature_dim: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_lambda")]
    pub lambda_dec: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// F-beta weight for threshold selection.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon")]
    pub horizon_days: f64,
    #[serde(default = "default_preterm_week")]
    pub preterm_week: f64,
    #[serde(default = "default_window")]
    pub window_days: f64,
    #[serde(default = "yes")]
    pub aggregate_same_day: bool,
    /// Drop dynamic features missing in more than this fraction of visits.
    #[serde(default)]
    pub max_missing_rate: Option<f64>,
    #[serde(default = "yes")]
    pub oversample: bool,
    /// SHA-256 of the config file bytes, set by [`RunConfig::load`].
    #[serde(skip)]
    pub source_hash: String,
}

impl RunConfig {
    /// Reads and validates a config; relative paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.data_dir = resolve(&cfg.data_dir);
        cfg.out_dir = resolve(&cfg.out_dir);
        cfg.schema = cfg.schema.as_deref().map(resolve);
        cfg.source_hash = sha256_hex(text.as_bytes());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data_dir.is_dir() {
            bail!("data_dir {} does not exist", self.data_dir.display());
        }
        if let Some(s) = &self.schema {
            if !s.is_file() {
                bail!("schema {} does not exist", s.display());
            }
        }
        if !self.primary_metric.eq_ignore_ascii_case("auprc") {
            bail!("primary_metric must be AUPRC, got {}", self.primary_metric);
        }
        if self.output_dim != 1 {
            bail!("output_dim must be 1 for binary classification, got {}", self.output_dim);
        }
        if self.folds < 2 {
            bail!("folds must be at least 2");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            bail!("beta must be positive");
        }
        self.hyper(0).validate()?;
        Ok(())
    }

    /// Hyperparameters for `fold`, seeded with `seed + fold`.
    pub fn hyper(&self, fold: usize) -> ModelHyper {
        ModelHyper {
            hidden_dim: self.hidden_dim,
            n_heads: self.n_heads,
            lambda_dec: self.lambda_dec,
            lr: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.fold_seed(fold),
            dynamic_dim: self.dynamic_feature_dim,
            static_dim: self.static_feature_dim,
        }
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(fold as u64)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
