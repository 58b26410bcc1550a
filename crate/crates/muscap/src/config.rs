//! Run configuration: a single JSON file, flag-overridable, with printable
//! defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Mode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    pub d_a: usize,
    pub d_w: usize,
    pub hidden: usize,
    pub d_s: usize,
    pub labels: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_a: 50,
            d_w: 300,
            hidden: 256,
            d_s: 300,
            labels: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// None disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub validation_fraction: f64,
    pub max_caption_len: usize,
    pub lambda: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            patience: None,
            seed: 42,
            validation_fraction: 0.25,
            max_caption_len: 16,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub embeddings: String,
    pub manifest: String,
    pub checkpoint_out: String,
    pub report_out: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            embeddings: "embeddings.txt".into(),
            manifest: "manifest.json".into(),
            checkpoint_out: "model.mcap".into(),
            report_out: "report.json".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub dims: Dims,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    PretrainFeatures,
    FullyTrain,
}

impl From<RunMode> for Mode {
    fn from(m: RunMode) -> Mode {
        match m {
            RunMode::PretrainFeatures => Mode::PretrainFeatures,
            RunMode::FullyTrain => Mode::FullyTrain,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.d_a == 0 || d.d_w == 0 || d.hidden == 0 || d.d_s == 0 || d.labels == 0 {
            return Err(Error::Config("all dims must be >= 1".into()));
        }
        let t = &self.training;
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} not in (0, 1)",
                t.validation_fraction
            )));
        }
        if t.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if t.max_caption_len == 0 {
            return Err(Error::Config("max_caption_len must be >= 1".into()));
        }
        if t.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        let o = &self.optimizer;
        if o.lr <= 0.0 || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}
