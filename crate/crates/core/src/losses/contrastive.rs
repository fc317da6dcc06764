//! Softmax contrastive terms over a batch of augmented rows.
//!
//! All three terms share one kernel: for each anchor `i` the loss averages
//! `-log softmax_i(j)` over the anchor's positives `j`, where the softmax runs
//! over every row except `i` itself. They differ only in what counts as a
//! positive: the augmentation sibling, rows with the same instance id, or
//! rows with the same class label. Losses are sums over anchors.

use ndarray::{Array2, ArrayView2};

use super::batch::ContrastBatch;
use super::config::{AnchorPolicy, LossConfig};
use super::similarity::Similarity;
use crate::error::{Error, Result};

/// Loss value plus gradient with respect to the embedding rows.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Anchors dropped under [`AnchorPolicy::Skip`].
    pub skipped_anchors: usize,
}

enum Positives<'a> {
    Sibling(&'a [usize]),
    Group(&'a [usize]),
}

fn kernel(z: ArrayView2<f64>, positives: Positives<'_>, cfg: &LossConfig) -> Result<LossGrad> {
    let rows = z.nrows();
    let sim = Similarity::compute(z, cfg.tau, cfg.normalize_embeddings)?;
    let logits = &sim.logits;
    let mut grad_logits = Array2::<f64>::zeros((rows, rows));
    let mut total = 0.0;
    let mut skipped = 0usize;
    let mut members = Vec::with_capacity(rows);

    for i in 0..rows {
        members.clear();
        match positives {
            Positives::Sibling(pair) => members.push(pair[i]),
            Positives::Group(groups) => {
                members.extend((0..rows).filter(|&j| j != i && groups[j] == groups[i]));
            }
        }
        if members.is_empty() {
            match cfg.anchor_policy {
                AnchorPolicy::Strict => {
                    return Err(Error::invalid(format!("anchor row {i} has no positive")));
                }
                AnchorPolicy::Skip => {
                    skipped += 1;
                    continue;
                }
            }
        }

        let row = logits.row(i);
        let log_denominator = if cfg.logit_stabilization {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln()
        } else {
            row.iter().map(|&s| s.exp()).sum::<f64>().ln()
        };

        let weight = 1.0 / members.len() as f64;
        let mut anchor_loss = 0.0;
        for &j in &members {
            anchor_loss -= row[j] - log_denominator;
        }
        total += weight * anchor_loss;

        // d/ds_ik of the anchor term: softmax_ik - [k positive] / P_i.
        let mut g = grad_logits.row_mut(i);
        for k in 0..rows {
            if k != i {
                g[k] = (row[k] - log_denominator).exp();
            }
        }
        for &j in &members {
            g[j] -= weight;
        }
    }

    let surviving = rows - skipped;
    if surviving == 0 {
        return Err(Error::invalid("no anchor in the batch has a positive"));
    }
    let scale = rows as f64 / surviving as f64;
    if skipped > 0 {
        total *= scale;
        grad_logits *= scale;
    }
    Ok(LossGrad {
        value: total,
        grad: sim.backward(&grad_logits),
        skipped_anchors: skipped,
    })
}

/// Instance-discrimination loss: the only positive of row `i` is its
/// augmentation sibling.
pub fn self_contrastive_grad(batch: &ContrastBatch, cfg: &LossConfig) -> Result<LossGrad> {
    if batch.rows() < 4 {
        return Err(Error::invalid(format!(
            "self-contrastive loss needs N >= 2 images (2N >= 4 rows), got {} rows",
            batch.rows()
        )));
    }
    kernel(batch.embeddings.view(), Positives::Sibling(&batch.pair_index), cfg)
}

pub fn self_contrastive_loss(batch: &ContrastBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(self_contrastive_grad(batch, cfg)?.value)
}

/// Contrastive loss where every other row sharing the anchor's group id is a
/// positive, normalized per anchor by its positive count.
pub fn group_contrastive_grad(
    batch: &ContrastBatch,
    group_ids: &[usize],
    cfg: &LossConfig,
) -> Result<LossGrad> {
    if group_ids.len() != batch.rows() {
        return Err(Error::invalid(format!(
            "{} group ids for {} rows",
            group_ids.len(),
            batch.rows()
        )));
    }
    kernel(batch.embeddings.view(), Positives::Group(group_ids), cfg)
}

pub fn group_contrastive_loss(batch: &ContrastBatch, group_ids: &[usize], cfg: &LossConfig) -> Result<f64> {
    Ok(group_contrastive_grad(batch, group_ids, cfg)?.value)
}

/// View-invariant term: positives are all views and augmentations sharing the
/// anchor's instance id.
pub fn view_loss_grad(batch: &ContrastBatch, cfg: &LossConfig) -> Result<LossGrad> {
    group_contrastive_grad(batch, &batch.instance_ids, cfg)
}

pub fn view_loss(batch: &ContrastBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(view_loss_grad(batch, cfg)?.value)
}

/// Supervised term: positives are all rows with the anchor's class label.
pub fn sup_loss_grad(batch: &ContrastBatch, cfg: &LossConfig) -> Result<LossGrad> {
    group_contrastive_grad(batch, &batch.labels, cfg)
}

pub fn sup_loss(batch: &ContrastBatch, cfg: &LossConfig) -> Result<f64> {
    Ok(sup_loss_grad(batch, cfg)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn pairs_batch(z: Array2<f64>) -> ContrastBatch {
        let n = z.nrows() / 2;
        let pair = (0..2 * n).map(|i| i ^ 1).collect();
        let ids: Vec<usize> = (0..2 * n).map(|i| i / 2).collect();
        ContrastBatch::new(z, pair, ids.clone(), ids, vec![0; 2 * n]).unwrap()
    }

    #[test]
    fn identical_rows_give_uniform_softmax() {
        let z = Array2::from_elem((4, 3), 0.7);
        for tau in [0.05, 0.1, 1.0, 7.0] {
            let cfg = LossConfig { tau, ..Default::default() };
            let loss = self_contrastive_loss(&pairs_batch(z.clone()), &cfg).unwrap();
            assert_relative_eq!(loss, 4.0 * 3f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let cfg = LossConfig { tau: 1.0, ..Default::default() };
        let e = std::f64::consts::E;
        let loss = self_contrastive_loss(&pairs_batch(z), &cfg).unwrap();
        assert_relative_eq!(loss, 4.0 * ((e + 2.0) / e).ln(), max_relative = 1e-12);
    }

    #[test]
    fn self_loss_needs_two_images() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(self_contrastive_loss(&pairs_batch(z), &LossConfig::default()).is_err());
    }

    #[test]
    fn strict_policy_rejects_lonely_anchor() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]];
        let b = pairs_batch(z);
        let groups = [0, 0, 1, 2];
        let err = group_contrastive_loss(&b, &groups, &LossConfig::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn skip_policy_rescales_by_surviving_anchors() {
        let z = array![[1.0, 0.2], [0.3, 1.0], [1.0, 1.0], [1.0, -1.0]];
        let b = pairs_batch(z);
        let cfg = LossConfig { anchor_policy: AnchorPolicy::Skip, ..Default::default() };
        let skipped = group_contrastive_grad(&b, &[0, 0, 1, 2], &cfg).unwrap();
        assert_eq!(skipped.skipped_anchors, 2);

        // The two surviving anchors contribute their own terms, doubled.
        let sim = Similarity::compute(b.embeddings.view(), cfg.tau, true).unwrap();
        let mut expected = 0.0;
        for (i, j) in [(0usize, 1usize), (1, 0)] {
            let row = sim.logits.row(i);
            let lse = row.iter().filter(|s| s.is_finite()).map(|s| s.exp()).sum::<f64>().ln();
            expected -= row[j] - lse;
        }
        assert_relative_eq!(skipped.value, 2.0 * expected, max_relative = 1e-12);
    }

    #[test]
    fn single_group_uses_all_others_as_positives() {
        let z = array![[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5], [0.4, -1.0]];
        let b = pairs_batch(z);
        let cfg = LossConfig::default();
        let loss = group_contrastive_loss(&b, &[9; 4], &cfg).unwrap();
        let sim = Similarity::compute(b.embeddings.view(), cfg.tau, true).unwrap();
        let mut expected = 0.0;
        for i in 0..4 {
            let row = sim.logits.row(i);
            let lse = row.iter().filter(|s| s.is_finite()).map(|s| s.exp()).sum::<f64>().ln();
            for j in (0..4).filter(|&j| j != i) {
                expected -= (row[j] - lse) / 3.0;
            }
        }
        assert_relative_eq!(loss, expected, max_relative = 1e-12);
    }

    #[test]
    fn unstabilized_path_agrees_for_moderate_logits() {
        let z = array![[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5], [0.4, -1.0]];
        let b = pairs_batch(z);
        let a = self_contrastive_loss(&b, &LossConfig::default()).unwrap();
        let cfg = LossConfig { logit_stabilization: false, ..Default::default() };
        let c = self_contrastive_loss(&b, &cfg).unwrap();
        assert_relative_eq!(a, c, max_relative = 1e-12);
    }
}
