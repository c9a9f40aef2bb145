//! Experiment configuration: a flat, typed key-value TOML document with
//! strict key checking, plus conversions into the typed pieces the training
//! loop consumes.

use crate::loss::BaseLoss;
use crate::model::LrSchedule;
use crate::noise::{cifar10_asym_map, circular_map, NoiseSpec};
use crate::threshold::ThresholdStrategy;
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Arcs,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Symmetric,
    Asymmetric,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Ce,
    Fl,
    Gce,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Optimized,
    Fixed,
    Linear,
    Ema,
}

/// One experiment: dataset, noise, loss, threshold strategy, and optimizer
/// settings. Unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    // dataset
    pub dataset: DatasetKind,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "defaults::blob_std")]
    pub blob_std: f64,
    #[serde(default = "defaults::arc_noise")]
    pub arc_noise: f64,
    #[serde(default)]
    pub idx_train_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_train_labels: Option<PathBuf>,
    #[serde(default)]
    pub idx_test_images: Option<PathBuf>,
    #[serde(default)]
    pub idx_test_labels: Option<PathBuf>,

    // label noise
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub noise_rate: f64,
    /// "circular", "cifar10", or explicit pairs like "9:1,2:0".
    #[serde(default = "defaults::asym_map")]
    pub asym_map: String,
    #[serde(default = "defaults::instance_projections")]
    pub instance_projections: usize,

    // loss
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "defaults::fl_gamma")]
    pub fl_gamma: f64,
    #[serde(default = "defaults::gce_q")]
    pub gce_q: f64,

    // threshold strategy
    #[serde(default)]
    pub strategy: StrategyKind,
    #[serde(default = "defaults::epsilon0")]
    pub epsilon0: f64,
    #[serde(default = "defaults::fixed_tau")]
    pub fixed_tau: f64,
    #[serde(default = "defaults::linear_beta")]
    pub linear_beta: f64,
    #[serde(default = "defaults::ema_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "defaults::queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "defaults::time_frame")]
    pub time_frame: usize,
    #[serde(default = "defaults::warmup_samples")]
    pub warmup_samples: usize,

    // optimization
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::lr_milestones")]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::param_clip")]
    pub param_clip: f64,
    #[serde(default = "defaults::hidden_dims")]
    pub hidden_dims: Vec<usize>,

    #[serde(default = "defaults::seed")]
    pub seed: u64,
}

mod defaults {
    pub fn n_train() -> usize {
        512
    }
    pub fn n_test() -> usize {
        512
    }
    pub fn classes() -> usize {
        2
    }
    pub fn feature_dim() -> usize {
        2
    }
    pub fn blob_std() -> f64 {
        0.8
    }
    pub fn arc_noise() -> f64 {
        0.15
    }
    pub fn asym_map() -> String {
        "circular".into()
    }
    pub fn instance_projections() -> usize {
        8
    }
    pub fn fl_gamma() -> f64 {
        0.5
    }
    pub fn gce_q() -> f64 {
        0.7
    }
    pub fn epsilon0() -> f64 {
        20.0
    }
    pub fn fixed_tau() -> f64 {
        2.0
    }
    pub fn linear_beta() -> f64 {
        10.0
    }
    pub fn ema_alpha() -> f64 {
        0.9999
    }
    pub fn queue_capacity() -> usize {
        4096
    }
    pub fn time_frame() -> usize {
        32
    }
    pub fn warmup_samples() -> usize {
        512
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn epochs() -> usize {
        150
    }
    pub fn lr() -> f64 {
        0.1
    }
    pub fn lr_decay() -> f64 {
        0.1
    }
    pub fn lr_milestones() -> Vec<usize> {
        vec![50, 100]
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        5e-4
    }
    pub fn param_clip() -> f64 {
        5.0
    }
    pub fn hidden_dims() -> Vec<usize> {
        vec![32]
    }
    pub fn seed() -> u64 {
        1
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.time_frame < 1 {
            return bad("time_frame must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.queue_capacity < self.batch_size {
            return bad(format!(
                "queue_capacity {} must be >= batch_size {}",
                self.queue_capacity, self.batch_size
            ));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.classes < 2 {
            return bad("classes must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} must lie in [0, 1)", self.noise_rate));
        }
        if self.dataset == DatasetKind::Idx
            && (self.idx_train_images.is_none()
                || self.idx_train_labels.is_none()
                || self.idx_test_images.is_none()
                || self.idx_test_labels.is_none())
        {
            return bad("idx dataset needs idx_train_* and idx_test_* paths".into());
        }
        if self.lr_milestones.windows(2).any(|w| w[1] <= w[0]) {
            return bad("lr_milestones must be strictly increasing".into());
        }
        self.base_loss().map(|_| ())?;
        self.noise_spec().map(|_| ())?;
        Ok(())
    }

    pub fn base_loss(&self) -> Result<BaseLoss, ConfigError> {
        let base = match self.loss {
            LossKind::Ce => BaseLoss::CrossEntropy,
            LossKind::Mae => BaseLoss::Mae,
            LossKind::Fl => {
                BaseLoss::focal(self.fl_gamma).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            LossKind::Gce => BaseLoss::generalized_ce(self.gce_q)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        Ok(base)
    }

    /// Threshold strategy; the linear schedule needs the run length, so it is
    /// resolved against the total number of optimizer steps.
    pub fn strategy(&self, total_steps: usize) -> Result<ThresholdStrategy, ConfigError> {
        let strategy = match self.strategy {
            StrategyKind::Optimized => ThresholdStrategy::Optimized {
                epsilon0: self.epsilon0,
            },
            StrategyKind::Fixed => ThresholdStrategy::Fixed {
                tau: self.fixed_tau,
            },
            StrategyKind::Linear => ThresholdStrategy::Linear {
                beta: self.linear_beta,
                total_steps,
            },
            StrategyKind::Ema => ThresholdStrategy::Ema {
                alpha: self.ema_alpha,
            },
        };
        strategy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(strategy)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, ConfigError> {
        let spec = match self.noise {
            NoiseKind::None => NoiseSpec::Symmetric { eta: 0.0 },
            NoiseKind::Symmetric => NoiseSpec::Symmetric {
                eta: self.noise_rate,
            },
            NoiseKind::Asymmetric => NoiseSpec::Asymmetric {
                class_map: self.parse_asym_map()?,
                eta: self.noise_rate,
            },
            NoiseKind::Instance => NoiseSpec::InstanceDependent {
                rate: self.noise_rate,
                projections: self.instance_projections,
                seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
            },
        };
        Ok(spec)
    }

    fn parse_asym_map(&self) -> Result<Vec<(usize, usize)>, ConfigError> {
        match self.asym_map.as_str() {
            "circular" => Ok(circular_map(self.classes)),
            "cifar10" => Ok(cifar10_asym_map()),
            pairs => pairs
                .split(',')
                .map(|pair| {
                    let (a, b) = pair.split_once(':').ok_or_else(|| {
                        ConfigError::Invalid(format!("asym_map entry '{pair}' is not from:to"))
                    })?;
                    let from = a.trim().parse::<usize>().map_err(|_| {
                        ConfigError::Invalid(format!("asym_map source '{a}' is not an index"))
                    })?;
                    let to = b.trim().parse::<usize>().map_err(|_| {
                        ConfigError::Invalid(format!("asym_map target '{b}' is not an index"))
                    })?;
                    Ok((from, to))
                })
                .collect(),
        }
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule, ConfigError> {
        LrSchedule::new(self.lr, self.lr_decay, self.lr_milestones.clone())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Layer dims of the classifier: input, hidden stack, output classes.
    /// The class count comes from the loaded data, which for IDX sources can
    /// exceed the configured synthetic-generator `classes`.
    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(classes);
        dims
    }
}
