use serde::{Deserialize, Serialize};

use super::schedule::PlateauConfig;
use crate::augment::{policy_for_stage, AugmentPolicy, Stage};
use crate::data::BatchComposition;
use crate::losses::{AnchorPolicy, LossConfig};
use crate::nn::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Images per batch before augmentation (`N`).
    pub batch_images: usize,
    pub batch_composition: BatchComposition,
    pub loss: LossConfig,
    pub augment: AugmentPolicy,
    pub seed: u64,
    /// Record elapsed seconds in the epoch log. Off by default so logs are
    /// byte-identical across reruns.
    pub log_wall_time: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            warmup_epochs: 10,
            batch_images: 64,
            batch_composition: BatchComposition::default(),
            loss: LossConfig {
                anchor_policy: AnchorPolicy::Skip,
                ..LossConfig::default()
            },
            augment: policy_for_stage(Stage::Pretrain),
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("pretrain epochs must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        check_optimizer(self.base_lr, self.weight_decay)?;
        self.loss.validate()?;
        self.augment.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub plateau: PlateauConfig,
    pub batch_images: usize,
    /// Fraction of training subjects held out to drive the plateau schedule.
    pub val_fraction: f64,
    /// Train only the classification layer.
    pub linear_probe: bool,
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub log_wall_time: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            base_lr: 1e-4,
            weight_decay: 1e-5,
            plateau: PlateauConfig::default(),
            batch_images: 64,
            val_fraction: 0.1,
            linear_probe: false,
            augment: policy_for_stage(Stage::Finetune),
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("finetune epochs must be positive"));
        }
        if self.batch_images < 2 {
            return Err(Error::invalid("finetune batch must hold at least 2 images"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        check_optimizer(self.base_lr, self.weight_decay)?;
        self.plateau.validate()?;
        self.augment.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

fn check_optimizer(lr: f64, wd: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("base_lr must be positive, got {lr}")));
    }
    if !(wd >= 0.0 && wd.is_finite()) {
        return Err(Error::invalid(format!("weight_decay must be non-negative, got {wd}")));
    }
    Ok(())
}
