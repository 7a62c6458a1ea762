//! Run configuration: one JSON document describes data, model, loss and training.
//!
//! Every field has a default, so `{}` is a complete configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::{read_trajectory_file, ParseOptions};
use crate::error::{Error, Result};
use crate::loss::NceConfig;
use crate::metrics::EvalOptions;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;
use crate::scene::{slice_samples, Sample, Scene};
use crate::sim::{generate_dataset, split_scenes, ScenarioConfig, SceneSplit, SplitSpec};

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate at the first epoch to `final_lr` at the last.
    Cosine { final_lr: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_lr } => {
                if epochs <= 1 {
                    return base;
                }
                let progress = epoch as f64 / (epochs - 1) as f64;
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 64,
            schedule: LrSchedule::Constant,
        }
    }
}

/// Where training and validation scenes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        scenario: ScenarioConfig,
        #[serde(default)]
        split: SplitSpec,
    },
    /// Trajectory text files. With no validation files, the training files'
    /// scenes are split by `split`.
    Files {
        train: Vec<PathBuf>,
        #[serde(default)]
        val: Vec<PathBuf>,
        #[serde(default)]
        parse: ParseOptions,
        #[serde(default)]
        split: SplitSpec,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            scenario: ScenarioConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub obs_len: usize,
    pub pred_len: usize,
    /// Frames between consecutive sample windows.
    pub window_stride: usize,
    pub model: ModelConfig,
    pub nce: NceConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub eval: EvalOptions,
    /// Threads for per-sample gradient evaluation; 1 is sequential.
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            obs_len: 8,
            pred_len: 12,
            window_stride: 1,
            model: ModelConfig::default(),
            nce: NceConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 300,
            eval: EvalOptions::default(),
            workers: 1,
            seed: 0,
        }
    }
}

/// Named presets.
pub const PRESETS: [&str; 2] = ["default", "tuned"];

impl RunConfig {
    /// The tuned loss and augmentation values reported as best in the search.
    pub fn tuned() -> Self {
        let mut cfg = Self::default();
        cfg.nce.temperature = 0.1412;
        cfg.nce.horizon = 1;
        cfg.nce.contrastive_weight = 16.0;
        cfg.augment.rho_min = 0.22;
        cfg.augment.rho_max = 3.1;
        cfg.augment.noise_weight = 0.24;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "tuned" => Ok(Self::tuned()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nce.validate()?;
        self.augment.validate()?;
        if self.obs_len == 0 || self.pred_len == 0 {
            return Err(Error::InvalidConfig("obs_len and pred_len must be at least 1".into()));
        }
        if self.nce.horizon > self.pred_len {
            return Err(Error::HorizonTooLong {
                horizon: self.nce.horizon,
                pred_len: self.pred_len,
            });
        }
        if self.window_stride == 0 {
            return Err(Error::InvalidConfig("window_stride must be at least 1".into()));
        }
        if self.model.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be at least 1".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let lr = self.optimizer.adam.lr;
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {lr}"
            )));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if !(self.eval.threshold.is_finite() && self.eval.threshold >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "collision threshold must be non-negative, got {}",
                self.eval.threshold
            )));
        }
        match &self.data {
            DataSource::Synthetic { scenario, split } => {
                scenario.validate()?;
                split.validate()?;
            }
            DataSource::Files { train, split, .. } => {
                if train.is_empty() {
                    return Err(Error::InvalidConfig("no training files given".into()));
                }
                split.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::file(path, e))
    }

    /// `(train scenes, validation scenes)` for this configuration.
    pub fn load_scenes(&self) -> Result<SceneSplit> {
        match &self.data {
            DataSource::Synthetic { scenario, split } => generate_dataset(scenario, split),
            DataSource::Files {
                train,
                val,
                parse,
                split,
            } => {
                let read = |paths: &[PathBuf]| -> Result<Vec<Arc<Scene>>> {
                    paths
                        .iter()
                        .map(|p| read_trajectory_file(p, parse).map(Arc::new))
                        .collect()
                };
                let train_scenes = read(train)?;
                if val.is_empty() {
                    split_scenes(&train_scenes, split)
                } else {
                    Ok((train_scenes, read(val)?))
                }
            }
        }
    }

    pub fn samples(&self, scenes: &[Arc<Scene>]) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for s in scenes {
            out.extend(slice_samples(s, self.obs_len, self.pred_len, self.window_stride)?);
        }
        Ok(out)
    }

    /// `(train samples, validation samples)`.
    pub fn load_samples(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let (train, val) = self.load_scenes()?;
        Ok((self.samples(&train)?, self.samples(&val)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn json_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::tuned()] {
            assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        let mut c = RunConfig::default();
        c.optimizer.schedule = LrSchedule::Cosine { final_lr: 1e-5 };
        c.data = DataSource::Files {
            train: vec!["a.txt".into()],
            val: vec![],
            parse: ParseOptions::default(),
            split: SplitSpec::default(),
        };
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        assert!(RunConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(matches!(
            RunConfig::from_json(r#"{"nce": {"horizon": 13}}"#),
            Err(Error::HorizonTooLong {
                horizon: 13,
                pred_len: 12
            })
        ));
        assert!(RunConfig::from_json(r#"{"nce": {"temperature": 0}}"#).is_err());
    }

    #[test]
    fn presets() {
        let t = RunConfig::preset("tuned").unwrap();
        assert_eq!(t.nce.temperature, 0.1412);
        assert_eq!(t.nce.horizon, 1);
        assert_eq!(t.nce.contrastive_weight, 16.0);
        assert_eq!(
            (t.augment.rho_min, t.augment.rho_max, t.augment.noise_weight),
            (0.22, 3.1, 0.24)
        );
        assert!(RunConfig::preset("best").is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { final_lr: 1e-5 };
        assert_eq!(s.rate(1e-3, 0, 10), 1e-3);
        assert!((s.rate(1e-3, 9, 10) - 1e-5).abs() < 1e-18);
    }
}
