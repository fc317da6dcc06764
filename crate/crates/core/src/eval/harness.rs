use serde::{Deserialize, Serialize};

use super::{evaluate, MetricsReport};
use crate::data::{subsample_labels, Dataset};
use crate::model::{Checkpoint, EncoderConfig};
use crate::train::{finetune, pretrain, train_baseline, EpochLog, FinetuneConfig, PretrainConfig, SupervisedOutcome};
use crate::Result;

/// Everything needed to run one model end to end on a train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Harness {
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Seed for label subsampling, shared by both models so they see the
    /// same labeled groups.
    pub label_seed: u64,
}

impl Default for Harness {
    fn default() -> Self {
        Harness {
            encoder: EncoderConfig::desk(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            label_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub outcome: SupervisedOutcome,
    /// Present for the contrastive model only.
    pub pretrained: Option<Checkpoint>,
    pub logs: Vec<EpochLog>,
}

impl Harness {
    fn labeled(&self, train: &Dataset, fraction: f64) -> Result<Dataset> {
        Ok(subsample_labels(train, fraction, self.label_seed)?.dataset)
    }

    /// Contrastive pretraining on every training image (labels only where
    /// kept), fine-tuning on the labeled ones, evaluation on `test`.
    pub fn viewfx(
        &self,
        train: &Dataset,
        test: &Dataset,
        fraction: f64,
        fold_id: Option<usize>,
        split: &str,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<RunResult> {
        let ds = self.labeled(train, fraction)?;
        let (_, ck, mut logs) = pretrain(&ds, &self.encoder, &self.pretrain, on_epoch)?;
        let mut outcome = finetune(&ds, &ck, &self.finetune, on_epoch)?;
        logs.extend(outcome.logs.iter().cloned());
        let idx: Vec<usize> = (0..test.len()).collect();
        let report = evaluate(&mut outcome.classifier, test, &idx, fold_id, split)?;
        Ok(RunResult { report, outcome, pretrained: Some(ck), logs })
    }

    /// Cross-entropy training from scratch on the same labeled images.
    pub fn baseline(
        &self,
        train: &Dataset,
        test: &Dataset,
        fraction: f64,
        fold_id: Option<usize>,
        split: &str,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<RunResult> {
        let ds = self.labeled(train, fraction)?;
        let mut outcome = train_baseline(&ds, &self.encoder, &self.finetune, on_epoch)?;
        let idx: Vec<usize> = (0..test.len()).collect();
        let report = evaluate(&mut outcome.classifier, test, &idx, fold_id, split)?;
        Ok(RunResult { report, logs: outcome.logs.clone(), outcome, pretrained: None })
    }
}
