use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};

use super::config::PretrainConfig;
use super::schedule::cosine_warmup_lr;
use super::{augmented_batch, EpochLog};
use crate::data::{ContrastSampler, Dataset};
use crate::losses::{total_loss, BranchOutputs, BtPlacement, LossComponents};
use crate::model::{Checkpoint, EncoderConfig, PretrainNet, Projections, RngState};
use crate::nn::{Adam, Parameters};
use crate::{Error, Result};

/// Column block `[from, from + n)` of a `(dim, 2N)` projection as an `(n, dim)`
/// double-precision matrix.
fn branch(m: &Array2<f32>, from: usize, n: usize) -> Array2<f64> {
    m.slice(s![.., from..from + n]).t().mapv(f64::from)
}

fn to_columns(g1: ArrayView2<f64>, g2: ArrayView2<f64>) -> Array2<f32> {
    let n = g1.nrows();
    let mut out = Array2::<f32>::zeros((g1.ncols(), 2 * n));
    out.slice_mut(s![.., ..n]).assign(&g1.t().mapv(|v| v as f32));
    out.slice_mut(s![.., n..]).assign(&g2.t().mapv(|v| v as f32));
    out
}

/// Evaluates the composite objective on projections of `[aug1; aug2]`
/// (columns `0..N` then `N..2N`) and returns the components together with
/// the gradients with respect to `z`, `w_a` and `w_b` in the same layout.
/// Intermediate gradients are `None` when no intermediate term is active.
pub fn project_batch(
    p: &Projections,
    labels: &[Option<usize>],
    instance_ids: &[usize],
    view_ids: &[usize],
    cfg: &crate::losses::LossConfig,
) -> Result<(LossComponents, Array2<f32>, Option<(Array2<f32>, Array2<f32>)>)> {
    let n = labels.len();
    let (z1, z2) = (branch(&p.z, 0, n), branch(&p.z, n, n));
    let (w1a, w2a) = (branch(&p.w_a, 0, n), branch(&p.w_a, n, n));
    let (w1b, w2b) = (branch(&p.w_b, 0, n), branch(&p.w_b, n, n));
    let out = total_loss(
        &BranchOutputs {
            z1: z1.view(),
            z2: z2.view(),
            w1a: w1a.view(),
            w2a: w2a.view(),
            w1b: w1b.view(),
            w2b: w2b.view(),
            labels,
            instance_ids,
            view_ids,
        },
        cfg,
    )?;
    let dz = to_columns(out.grad_z1.view(), out.grad_z2.view());
    let inter = (cfg.terms.bt == BtPlacement::Intermediate && cfg.weights().2 != 0.0).then(|| {
        (
            to_columns(out.grad_w1a.view(), out.grad_w2a.view()),
            to_columns(out.grad_w1b.view(), out.grad_w2b.view()),
        )
    });
    Ok((out.components, dz, inter))
}

fn finite(a: &Array2<f32>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Stateful contrastive pretraining, resumable at epoch boundaries.
pub struct Pretrainer<'a> {
    ds: &'a Dataset,
    pub config: PretrainConfig,
    pub net: PretrainNet,
    pub optimizer: Adam,
    sampler: ContrastSampler,
    /// Next epoch to run.
    pub epoch: usize,
    started: Instant,
}

impl<'a> Pretrainer<'a> {
    pub fn new(ds: &'a Dataset, encoder: &EncoderConfig, config: &PretrainConfig) -> Result<Self> {
        config.validate()?;
        let net = PretrainNet::new(encoder, config.seed)?;
        Ok(Self {
            sampler: ContrastSampler::with_composition(ds, config.batch_images, config.batch_composition)?,
            optimizer: Adam::new(config.adam()),
            net,
            ds,
            config: config.clone(),
            epoch: 0,
            started: Instant::now(),
        })
    }

    /// Continues from a pretraining checkpoint with its stored configuration.
    pub fn resume(ds: &'a Dataset, ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "pretrain" {
            return Err(Error::Checkpoint(format!("expected a pretrain checkpoint, found {:?}", ck.kind)));
        }
        let encoder: EncoderConfig = serde_json::from_value(ck.config["encoder"].clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable encoder config: {e}")))?;
        let config: PretrainConfig = serde_json::from_value(ck.config["pretrain"].clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable pretrain config: {e}")))?;
        let mut me = Self::new(ds, &encoder, &config)?;
        ck.restore(&mut me.net, "")?;
        me.optimizer = ck.restore_optimizer()?;
        if ck.rng.seed != config.seed {
            return Err(Error::Checkpoint("checkpoint RNG seed disagrees with its config".into()));
        }
        me.epoch = ck.rng.next_epoch;
        Ok(me)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            "pretrain",
            serde_json::json!({ "encoder": self.net.config(), "pretrain": self.config }),
            self.epoch,
            RngState {
                seed: self.config.seed,
                next_epoch: self.epoch,
            },
        );
        ck.capture(&self.net);
        ck.capture_optimizer(&self.optimizer);
        ck
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let cfg = &self.config;
        let epoch = self.epoch;
        let lr = cosine_warmup_lr(epoch, cfg.epochs, cfg.warmup_epochs, cfg.base_lr)?;
        let enc = self.net.config().clone();
        let batches = self.sampler.epoch(cfg.seed, epoch);
        let mut sum = LossComponents::default();
        for (step, idx) in batches.iter().enumerate() {
            let n = idx.len();
            let mut both = idx.clone();
            both.extend_from_slice(idx);
            let key = |pos: usize| (step * 2 * n + pos) as u64;
            let x = augmented_batch(self.ds, &both, &cfg.augment, enc.input_size, enc.input_channels, cfg.seed, epoch, key)?;
            let samples: Vec<_> = idx.iter().map(|&i| &self.ds.samples[i]).collect();
            let labels: Vec<Option<usize>> = samples.iter().map(|s| s.labeled.then_some(s.label)).collect();
            let ids: Vec<usize> = samples.iter().map(|s| s.instance).collect();
            let views: Vec<usize> = samples.iter().map(|s| s.view).collect();

            let p = self.net.forward(&x, true)?;
            let non_finite = || Error::NonFinite {
                epoch,
                step,
                batch: idx.clone(),
            };
            if !(finite(&p.z) && finite(&p.w_a) && finite(&p.w_b)) {
                return Err(non_finite());
            }
            let (c, dz, inter) = project_batch(&p, &labels, &ids, &views, &cfg.loss).map_err(|e| match e {
                Error::InvalidInput(m) if m.contains("norm") => non_finite(),
                e => e,
            })?;
            if !c.total.is_finite() || !finite(&dz) {
                return Err(non_finite());
            }
            self.net.zero_grad();
            match &inter {
                Some((ga, gb)) => self.net.backward(&dz, Some(ga), Some(gb)),
                None => self.net.backward(&dz, None, None),
            }
            self.optimizer.update(self.net.named_params_mut(), lr);
            sum.total += c.total;
            sum.sup += c.sup;
            sum.view += c.view;
            sum.bt1 += c.bt1;
            sum.bt2 += c.bt2;
            sum.rows = c.rows;
        }
        let steps = batches.len() as f64;
        self.epoch += 1;
        Ok(EpochLog {
            stage: "pretrain".into(),
            epoch,
            lr,
            loss_total: sum.total / steps,
            loss_sup: Some(sum.sup / steps),
            loss_view: Some(sum.view / steps),
            loss_bt1: Some(sum.bt1 / steps),
            loss_bt2: Some(sum.bt2 / steps),
            loss_total_per_anchor: Some(sum.total / steps / sum.rows as f64),
            val_metric: None,
            train_metric: None,
            wall_time_s: cfg.log_wall_time.then(|| self.started.elapsed().as_secs_f64()),
        })
    }

    pub fn run(&mut self, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.finished() {
            let log = self.run_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Runs all epochs and returns the final checkpoint with the epoch logs.
pub fn pretrain(
    ds: &Dataset,
    encoder: &EncoderConfig,
    config: &PretrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(PretrainNet, Checkpoint, Vec<EpochLog>)> {
    let mut t = Pretrainer::new(ds, encoder, config)?;
    let logs = t.run(on_epoch)?;
    let ck = t.checkpoint();
    Ok((t.net, ck, logs))
}

