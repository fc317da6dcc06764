//! Contrastive pretraining, supervised fine-tuning and the cross-entropy
//! baseline.

mod config;
mod pretrain;
mod schedule;
mod supervised;

pub use config::{FinetuneConfig, PretrainConfig};
pub use pretrain::{pretrain, project_batch, Pretrainer};
pub use schedule::{cosine_warmup_lr, plateau_lr, Plateau, PlateauConfig};
pub use supervised::{finetune, train_baseline, SupervisedOutcome};

use std::sync::Arc;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentPolicy};
use crate::data::{stack, Dataset};
use crate::raster::Raster;
use crate::rng::{self, Purpose};
use crate::Result;

/// One line of `logs.jsonl`. Component losses are absent for the
/// cross-entropy stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's steps of the per-batch objective.
    pub loss_total: f64,
    pub loss_sup: Option<f64>,
    pub loss_view: Option<f64>,
    pub loss_bt1: Option<f64>,
    pub loss_bt2: Option<f64>,
    /// `loss_total` divided by the number of augmented rows per batch, for
    /// comparison across batch sizes.
    pub loss_total_per_anchor: Option<f64>,
    pub val_metric: Option<f64>,
    pub train_metric: Option<f64>,
    pub wall_time_s: Option<f64>,
}

pub fn load_image(ds: &Dataset, index: usize, channels: usize) -> Result<Arc<Raster>> {
    let r = ds.raster(index)?;
    if r.channels == channels {
        Ok(r)
    } else {
        Ok(Arc::new(r.with_channels(channels)?))
    }
}

/// Augments `indices` with streams keyed by `(seed, epoch, key(position))`
/// and stacks the results channel-major.
pub(crate) fn augmented_batch(
    ds: &Dataset,
    indices: &[usize],
    policy: &AugmentPolicy,
    size: usize,
    channels: usize,
    seed: u64,
    epoch: usize,
    key: impl Fn(usize) -> u64,
) -> Result<Array4<f32>> {
    let mut imgs = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let src = load_image(ds, i, channels)?;
        let mut r = rng::stream(seed, Purpose::Augment, epoch as u64, key(pos));
        imgs.push(augment(&src, policy, size, &mut r));
    }
    Ok(stack(&imgs))
}
