use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::barlow::barlow_twins_grad;
use super::batch::ContrastBatch;
use super::config::{BtPlacement, LossConfig};
use super::contrastive::{group_contrastive_grad, LossGrad};
use crate::error::{Error, Result};

/// Projections of one batch of `N` images under two augmentations.
///
/// Row `b` of every matrix belongs to image `b`. `labels[b]` is `None` for an
/// image whose label is withheld; such images still take part in the
/// label-free terms.
#[derive(Debug, Clone, Copy)]
pub struct BranchOutputs<'a> {
    pub z1: ArrayView2<'a, f64>,
    pub z2: ArrayView2<'a, f64>,
    pub w1a: ArrayView2<'a, f64>,
    pub w2a: ArrayView2<'a, f64>,
    pub w1b: ArrayView2<'a, f64>,
    pub w2b: ArrayView2<'a, f64>,
    pub labels: &'a [Option<usize>],
    pub instance_ids: &'a [usize],
    pub view_ids: &'a [usize],
}

/// The four named terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub sup: f64,
    pub view: f64,
    pub bt1: f64,
    pub bt2: f64,
    /// Number of augmented rows (`2N`).
    pub rows: usize,
    pub labeled_rows: usize,
    pub skipped_anchors: usize,
}

impl LossComponents {
    /// `sup + gamma * view + beta * (bt1 + bt2)` with the term switches of
    /// `cfg` applied.
    pub fn combine(sup: f64, view: f64, bt1: f64, bt2: f64, cfg: &LossConfig) -> f64 {
        let (ws, wv, wb) = cfg.weights();
        ws * sup + wv * view + wb * (bt1 + bt2)
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub components: LossComponents,
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
    pub grad_w1a: Array2<f64>,
    pub grad_w2a: Array2<f64>,
    pub grad_w1b: Array2<f64>,
    pub grad_w2b: Array2<f64>,
}

fn check_pair(name: &str, a: ArrayView2<f64>, b: ArrayView2<f64>, n: usize) -> Result<()> {
    if a.dim() != b.dim() || a.nrows() != n {
        return Err(Error::invalid(format!(
            "{name} branches must both have {n} rows and equal shape, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Scatters interleaved row gradients back onto the two branches.
fn split_rows(grad: &Array2<f64>, rows: &[usize], g1: &mut Array2<f64>, g2: &mut Array2<f64>, scale: f64) {
    for (r, &image) in rows.iter().enumerate() {
        let target = if r % 2 == 0 { &mut *g1 } else { &mut *g2 };
        target.row_mut(image).scaled_add(scale, &grad.row(r));
    }
}

pub fn total_loss(input: &BranchOutputs<'_>, cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let n = input.z1.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("batch needs at least 2 images, got {n}")));
    }
    check_pair("z", input.z1, input.z2, n)?;
    check_pair("intermediate a", input.w1a, input.w2a, n)?;
    check_pair("intermediate b", input.w1b, input.w2b, n)?;
    if input.labels.len() != n || input.instance_ids.len() != n || input.view_ids.len() != n {
        return Err(Error::invalid(format!(
            "metadata lengths ({}, {}, {}) do not match {n} images",
            input.labels.len(),
            input.instance_ids.len(),
            input.view_ids.len()
        )));
    }

    let (w_sup, w_view, w_bt) = cfg.weights();
    let mut grad_z1 = Array2::zeros(input.z1.dim());
    let mut grad_z2 = Array2::zeros(input.z2.dim());
    let mut grad_w1a = Array2::zeros(input.w1a.dim());
    let mut grad_w2a = Array2::zeros(input.w2a.dim());
    let mut grad_w1b = Array2::zeros(input.w1b.dim());
    let mut grad_w2b = Array2::zeros(input.w2b.dim());

    let dense_labels: Vec<usize> = input.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect();
    let batch = ContrastBatch::from_branches(input.z1, input.z2, &dense_labels, input.instance_ids, input.view_ids)?;
    let interleaved: Vec<usize> = (0..2 * n).map(|r| r / 2).collect();

    let view = group_contrastive_grad(&batch, &batch.instance_ids, cfg)?;
    split_rows(&view.grad, &interleaved, &mut grad_z1, &mut grad_z2, w_view);
    let mut skipped = view.skipped_anchors;

    // The supervised term only sees images whose label is available.
    let labeled_rows: Vec<usize> = (0..2 * n).filter(|&r| input.labels[r / 2].is_some()).collect();
    let sup = if labeled_rows.len() >= 2 {
        let sub = if labeled_rows.len() == 2 * n {
            batch.clone()
        } else {
            batch.select(&labeled_rows)?
        };
        let grad = group_contrastive_grad(&sub, &sub.labels, cfg)?;
        let images: Vec<usize> = labeled_rows.iter().map(|&r| r / 2).collect();
        split_rows(&grad.grad, &images, &mut grad_z1, &mut grad_z2, w_sup);
        skipped += grad.skipped_anchors;
        grad
    } else {
        LossGrad {
            value: 0.0,
            grad: Array2::zeros((0, 0)),
            skipped_anchors: 0,
        }
    };

    let (bt1, bt2) = match cfg.terms.bt {
        BtPlacement::Final => {
            let g = barlow_twins_grad(input.z1, input.z2, cfg.alpha, cfg.bt_mean_center)?;
            grad_z1.scaled_add(w_bt, &g.grad_a);
            grad_z2.scaled_add(w_bt, &g.grad_b);
            (g.value, 0.0)
        }
        BtPlacement::Intermediate | BtPlacement::Off => {
            let a = barlow_twins_grad(input.w1a, input.w2a, cfg.alpha, cfg.bt_mean_center)?;
            let b = barlow_twins_grad(input.w1b, input.w2b, cfg.alpha, cfg.bt_mean_center)?;
            if w_bt != 0.0 {
                grad_w1a.scaled_add(w_bt, &a.grad_a);
                grad_w2a.scaled_add(w_bt, &a.grad_b);
                grad_w1b.scaled_add(w_bt, &b.grad_a);
                grad_w2b.scaled_add(w_bt, &b.grad_b);
            }
            (a.value, b.value)
        }
    };

    let components = LossComponents {
        total: LossComponents::combine(sup.value, view.value, bt1, bt2, cfg),
        sup: sup.value,
        view: view.value,
        bt1,
        bt2,
        rows: 2 * n,
        labeled_rows: labeled_rows.len(),
        skipped_anchors: skipped,
    };
    Ok(TotalLoss {
        components,
        grad_z1,
        grad_z2,
        grad_w1a,
        grad_w2a,
        grad_w1b,
        grad_w2b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn combine_arithmetic() {
        let cfg = LossConfig { gamma: 0.5, beta: 0.9, ..Default::default() };
        assert_relative_eq!(LossComponents::combine(1.0, 2.0, 0.3, 0.2, &cfg), 2.45, max_relative = 1e-15);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = Array2::<f64>::ones((3, 4));
        let b = Array2::<f64>::ones((3, 5));
        let labels = [Some(0), Some(1), Some(0)];
        let ids = [0, 1, 2];
        let input = BranchOutputs {
            z1: a.view(),
            z2: b.view(),
            w1a: a.view(),
            w2a: a.view(),
            w1b: a.view(),
            w2b: a.view(),
            labels: &labels,
            instance_ids: &ids,
            view_ids: &ids,
        };
        assert!(total_loss(&input, &LossConfig::default()).is_err());
    }
}
