//! One serializable record holding every tunable of the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamWConfig;
use crate::checkpoint::hex;
use crate::datapipe::{AugmentConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::inference::{InferenceConfig, PostprocessConfig};
use crate::jsonfile;
use crate::loss::LossConfig;
use crate::phantom::PhantomSpec;
use crate::preprocess::PreprocessConfig;
use crate::segresnet::SegResNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch; by default every training case yields
    /// one patch per epoch.
    pub steps_per_epoch: Option<usize>,
    pub batch_size: usize,
    /// Micro-batches accumulated into one optimizer step.
    pub grad_accum: usize,
    pub lr0: f64,
    pub optimizer: AdamWConfig,
    pub val_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 || self.val_every == 0 {
            return Err(Error::Config("epochs, batch_size, grad_accum and val_every must be positive".into()));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::Config(format!("lr0 must be nonnegative, got {}", self.lr0)));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn steps(&self, train_cases: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| train_cases.div_ceil(self.batch_size * self.grad_accum).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalConfig {
    pub folds: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub preprocess: PreprocessConfig,
    pub network: SegResNetConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub crossval: CrossvalConfig,
    pub inference: InferenceConfig,
}

impl PipelineConfig {
    pub fn paper() -> Self {
        let network = SegResNetConfig::paper();
        Self {
            preset: Preset::Paper,
            seed: 0,
            phantom: PhantomSpec::default(),
            preprocess: PreprocessConfig::paper(),
            sampler: SamplerConfig {
                patch_size: network.patch_size,
                class_probs: [0.45, 0.45, 0.1],
            },
            inference: InferenceConfig {
                roi_size: network.patch_size,
                overlap: 0.5,
                window_batch: 1,
                tta: true,
                postprocess: PostprocessConfig::default(),
            },
            network,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig {
                epochs: 300,
                steps_per_epoch: None,
                batch_size: 1,
                grad_accum: 8,
                lr0: 2e-4,
                optimizer: AdamWConfig::default(),
                val_every: 10,
            },
            crossval: CrossvalConfig { folds: 5, runs: 3 },
        }
    }

    pub fn desk() -> Self {
        let network = SegResNetConfig::desk();
        let paper = Self::paper();
        Self {
            preset: Preset::Desk,
            preprocess: PreprocessConfig::desk(),
            sampler: SamplerConfig {
                patch_size: network.patch_size,
                ..paper.sampler
            },
            inference: InferenceConfig {
                roi_size: network.patch_size,
                window_batch: 4,
                ..paper.inference
            },
            network,
            train: TrainConfig {
                epochs: 40,
                batch_size: 1,
                grad_accum: 1,
                lr0: 2e-3,
                val_every: 10,
                ..paper.train
            },
            crossval: CrossvalConfig { folds: 2, runs: 1 },
            ..paper
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.preprocess.validate()?;
        self.network.validate()?;
        self.loss.validate()?;
        self.sampler.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        if self.crossval.folds == 0 || self.crossval.runs == 0 {
            return Err(Error::Config("folds and runs must be positive".into()));
        }
        let div = self.network.size_divisor();
        for (what, size) in [("sampler patch", self.sampler.patch_size), ("inference roi", self.inference.roi_size)] {
            if size.iter().any(|&s| s % div != 0) {
                return Err(Error::Config(format!("{what} {size:?} not divisible by {div}")));
            }
        }
        Ok(())
    }

    /// Parses JSON, rejecting unknown keys, and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonfile::write(path, self)
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    /// Models in the final ensemble.
    pub fn ensemble_size(&self) -> usize {
        self.crossval.folds * self.crossval.runs
    }
}
