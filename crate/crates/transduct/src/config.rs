//! Experiment configuration, stored as TOML next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transduct_core::optim::AdamConfig;
use transduct_core::{ArchConfig, DetectorConfig, GpConfig, PriorConfig, TrainConfig};

use crate::datasets::Dataset;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Encoder, bimodal latent prior and latent-feature detector.
    Transduct,
    /// Image-only generator and RBF detector on raw images.
    Vanilla,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Transduct => "transduct",
            Mode::Vanilla => "vanilla",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub dataset: Dataset,
    pub novel_class: u8,
    pub pi: f64,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub n_critic: usize,
    pub lambda: f32,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_per_epoch: Option<usize>,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub negative_branch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub latent_dim: usize,
    /// Modes sit at `-separation` and `+separation` on the first axis.
    pub separation: f32,
    pub variance: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub samples_per_class: usize,
    pub c: f64,
    pub bandwidth_points: usize,
    pub cache_mb: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_negative: usize,
    pub n_unlabeled: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_negative: 1000,
            n_unlabeled: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub train: TrainSection,
    pub prior: PriorSection,
    pub detector: DetectorSection,
    #[serde(default)]
    pub synthetic: SyntheticSection,
}

/// Synthetic runs use a larger step size than the image datasets; see the
/// README for the measured effect.
pub const SYNTHETIC_LEARNING_RATE: f32 = 5e-4;

impl ExperimentConfig {
    /// Defaults for one (dataset, class, pi, mode) cell with seeds 0, 1, 2.
    pub fn new(dataset: Dataset, novel_class: u8, pi: f64, mode: Mode) -> Self {
        let adam = AdamConfig::default();
        let detector = DetectorConfig::default();
        ExperimentConfig {
            experiment: ExperimentSection {
                dataset,
                novel_class,
                pi,
                mode,
                seeds: vec![0, 1, 2],
                output_dir: PathBuf::from("runs"),
                data_root: None,
                checkpoint_every: 0,
            },
            train: TrainSection {
                batch_size: 64,
                n_critic: 5,
                lambda: GpConfig::default().lambda,
                epochs: dataset.default_epochs(),
                iterations_per_epoch: None,
                learning_rate: if dataset == Dataset::Synthetic2d {
                    SYNTHETIC_LEARNING_RATE
                } else {
                    adam.learning_rate
                },
                beta1: adam.beta1,
                beta2: adam.beta2,
                negative_branch: false,
            },
            prior: PriorSection {
                latent_dim: dataset.arch().latent_dim,
                separation: 3.0,
                variance: 1.0,
            },
            detector: DetectorSection {
                samples_per_class: detector.samples_per_class,
                c: detector.c,
                bandwidth_points: detector.bandwidth_points,
                cache_mb: detector.cache_bytes >> 20,
            },
            synthetic: SyntheticSection::default(),
        }
    }

    pub fn arch(&self) -> ArchConfig {
        let mut arch = self.experiment.dataset.arch();
        arch.latent_dim = self.prior.latent_dim;
        arch
    }

    pub fn prior_config(&self) -> Result<PriorConfig> {
        let mut prior = PriorConfig::symmetric(self.prior.latent_dim, self.prior.separation, self.experiment.pi)?;
        prior.negative_variance = vec![self.prior.variance; self.prior.latent_dim];
        prior.positive_variance = vec![self.prior.variance; self.prior.latent_dim];
        prior.validate()?;
        Ok(prior)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            n_critic: t.n_critic,
            gp: GpConfig { lambda: t.lambda },
            pi: self.experiment.pi,
            epochs: t.epochs,
            iterations_per_epoch: t.iterations_per_epoch,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                ..AdamConfig::default()
            },
            seed,
            negative_branch: t.negative_branch,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let d = &self.detector;
        DetectorConfig {
            samples_per_class: d.samples_per_class,
            c: d.c,
            bandwidth_points: d.bandwidth_points,
            cache_bytes: d.cache_mb << 20,
            ..DetectorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Format("at least one seed is required".into()));
        }
        if e.novel_class > 9 || (e.dataset == Dataset::Synthetic2d && e.novel_class != 1) {
            return Err(Error::Format(format!(
                "novel class {} is not a class of {}",
                e.novel_class,
                e.dataset.name()
            )));
        }
        if !(e.pi > 0.0 && e.pi < 1.0) {
            return Err(Error::Format(format!("pi must lie in (0, 1), got {}", e.pi)));
        }
        if self.detector.samples_per_class == 0 {
            return Err(Error::Format("detector needs at least one sample per class".into()));
        }
        self.arch().validate()?;
        self.prior_config()?;
        self.train_config(e.seeds[0]).validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).at(path)?)
    }
}
