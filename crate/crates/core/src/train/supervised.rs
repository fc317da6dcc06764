use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::config::FinetuneConfig;
use super::schedule::Plateau;
use super::{augmented_batch, EpochLog};
use crate::data::{validation_split, Dataset};
use crate::eval::predict;
use crate::model::{build_finetune_model, Checkpoint, Classifier, EncoderConfig};
use crate::nn::{Adam, Param, Parameters};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub classifier: Classifier,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Accuracy of the returned classifier on its (non-validation) training
    /// images without augmentation.
    pub train_accuracy: f64,
}

/// Mean softmax cross-entropy over the columns of `logits` and its gradient.
fn cross_entropy(logits: &Array2<f32>, targets: &[usize]) -> (f64, usize, Array2<f32>) {
    let (k, n) = logits.dim();
    let mut grad = Array2::<f32>::zeros((k, n));
    let mut loss = 0.0;
    let mut correct = 0;
    for (b, &t) in targets.iter().enumerate() {
        let col = logits.column(b);
        let max = col.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + col.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - col[t] as f64;
        let argmax = (0..k).fold(0, |best, j| if col[j] > col[best] { j } else { best });
        correct += (argmax == t) as usize;
        for j in 0..k {
            let p = (col[j] as f64 - lse).exp();
            grad[[j, b]] = ((p - (j == t) as u8 as f64) / n as f64) as f32;
        }
    }
    (loss / n as f64, correct, grad)
}

fn snapshot(c: &Classifier) -> Vec<Param> {
    c.named_params().into_iter().map(|(_, p)| p.clone()).collect()
}

fn restore(c: &mut Classifier, saved: Vec<Param>) {
    for ((_, p), s) in c.named_params_mut().into_iter().zip(saved) {
        p.value = s.value;
    }
}

fn accuracy(c: &mut Classifier, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(c, ds, idx)?;
    let hits = preds.iter().zip(idx).filter(|(p, &i)| **p == ds.samples[i].label).count();
    Ok(hits as f64 / idx.len() as f64)
}

fn train_classifier(mut clf: Classifier, ds: &Dataset, cfg: &FinetuneConfig, stage: &str, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<SupervisedOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid(format!("{stage}: no labeled images")));
    }
    let (train_idx, val_idx) = validation_split(ds, cfg.val_fraction, cfg.seed)?;
    if train_idx.len() < 2 {
        return Err(Error::invalid(format!("{stage}: fewer than 2 training images after the validation split")));
    }
    let enc = clf.encoder.config.clone();
    let mut opt = Adam::new(cfg.adam());
    let mut plateau = Plateau::new(cfg.base_lr, cfg.plateau);
    let mut best = (f64::NEG_INFINITY, 0usize, snapshot(&clf));
    let mut logs = Vec::new();
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = plateau.lr;
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0));
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, 0usize);
        for (step, batch) in order.chunks(cfg.batch_images).enumerate() {
            // Batch statistics need at least two images.
            if batch.len() < 2 {
                continue;
            }
            let key = |pos: usize| (step * cfg.batch_images + pos) as u64;
            let x = augmented_batch(ds, batch, &cfg.augment, enc.input_size, enc.input_channels, cfg.seed, epoch, key)?;
            let targets: Vec<usize> = batch.iter().map(|&i| ds.samples[i].label).collect();
            let logits = clf.forward(&x, !cfg.linear_probe)?;
            let (loss, hits, grad) = cross_entropy(&logits, &targets);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step,
                    batch: batch.to_vec(),
                });
            }
            clf.zero_grad();
            clf.backward(&grad, !cfg.linear_probe);
            let params: Vec<_> = clf
                .named_params_mut()
                .into_iter()
                .filter(|(n, _)| !cfg.linear_probe || n.starts_with("classifier."))
                .collect();
            opt.update(params, lr);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            correct += hits;
        }
        let val = accuracy(&mut clf, ds, &val_idx)?;
        plateau.observe(val);
        if val > best.0 {
            best = (val, epoch, snapshot(&clf));
        }
        let log = EpochLog {
            stage: stage.to_string(),
            epoch,
            lr,
            loss_total: loss_sum / seen.max(1) as f64,
            loss_sup: None,
            loss_view: None,
            loss_bt1: None,
            loss_bt2: None,
            loss_total_per_anchor: None,
            val_metric: Some(val),
            train_metric: Some(correct as f64 / seen.max(1) as f64),
            wall_time_s: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&log);
        logs.push(log);
    }
    let (best_val_accuracy, best_epoch, params) = best;
    restore(&mut clf, params);
    let train_accuracy = accuracy(&mut clf, ds, &train_idx)?;
    Ok(SupervisedOutcome {
        classifier: clf,
        logs,
        best_epoch,
        best_val_accuracy,
        train_accuracy,
    })
}

/// Replaces the projection heads of a pretrained network with a linear
/// classifier and trains with cross-entropy on the labeled images of `ds`.
pub fn finetune(ds: &Dataset, pretrained: &Checkpoint, config: &FinetuneConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<SupervisedOutcome> {
    let encoder: EncoderConfig = serde_json::from_value(pretrained.config["encoder"].clone())
        .map_err(|e| Error::Checkpoint(format!("unreadable encoder config: {e}")))?;
    let clf = build_finetune_model(pretrained, &encoder, ds.num_classes(), config.seed)?;
    train_classifier(clf, &ds.labeled_subset(), config, "finetune", on_epoch)
}

/// The same classifier architecture trained from random initialization.
pub fn train_baseline(ds: &Dataset, encoder: &EncoderConfig, config: &FinetuneConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<SupervisedOutcome> {
    let clf = Classifier::new(encoder, ds.num_classes(), config.seed)?;
    train_classifier(clf, &ds.labeled_subset(), config, "baseline", on_epoch)
}
