//! Independent references for the objectives and a finite-difference
//! gradient checker, plus the suite behind the `verify` subcommand.

mod gradcheck;
mod oracle;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub use gradcheck::{gradcheck, GradcheckResult, REL_FLOOR};
pub use oracle::{naive_bt_loss, naive_group_loss, naive_self_loss, OracleOptions};

use crate::error::Result;
use crate::losses::{
    barlow_twins_grad, barlow_twins_loss, self_contrastive_grad, sup_loss_grad, total_loss, view_loss_grad,
    BranchOutputs, BtPlacement, ContrastBatch, LossConfig, LossTerms,
};
use crate::rng::{self, Purpose};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

/// Random paired-view batch: `n` images, two augmentations each. Images `2k`
/// and `2k + 1` are two views of one instance (when `n` allows).
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub w1a: Array2<f64>,
    pub w2a: Array2<f64>,
    pub w1b: Array2<f64>,
    pub w2b: Array2<f64>,
    pub labels: Vec<usize>,
    pub instance_ids: Vec<usize>,
    pub view_ids: Vec<usize>,
}

fn gaussian(rng: &mut rng::Stream, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

impl RandomCase {
    pub fn new(seed: u64, n: usize, dim: usize) -> Self {
        let mut rng = rng::stream(seed, Purpose::Eval, n as u64, dim as u64);
        let classes = (n / 2).max(1);
        let z1 = gaussian(&mut rng, n, dim);
        let z2 = gaussian(&mut rng, n, dim);
        let w1a = gaussian(&mut rng, n, dim);
        let w2a = gaussian(&mut rng, n, dim);
        let w1b = gaussian(&mut rng, n, dim + 2);
        let w2b = gaussian(&mut rng, n, dim + 2);
        let instance_ids: Vec<usize> = (0..n).map(|b| b / 2).collect();
        // Labels are constant per instance, as the data contract requires.
        let instance_labels: Vec<usize> = (0..n.div_ceil(2)).map(|_| rng.random_range(0..classes)).collect();
        let labels = instance_ids.iter().map(|&i| instance_labels[i]).collect();
        let view_ids = (0..n).map(|b| b % 2).collect();
        Self {
            z1,
            z2,
            w1a,
            w2a,
            w1b,
            w2b,
            labels,
            instance_ids,
            view_ids,
        }
    }

    pub fn batch(&self) -> ContrastBatch {
        ContrastBatch::from_branches(self.z1.view(), self.z2.view(), &self.labels, &self.instance_ids, &self.view_ids)
            .expect("well-formed random case")
    }

    pub fn inputs(&self) -> [Array2<f64>; 6] {
        [
            self.z1.clone(),
            self.z2.clone(),
            self.w1a.clone(),
            self.w2a.clone(),
            self.w1b.clone(),
            self.w2b.clone(),
        ]
    }
}

/// Evaluates the composite objective on six branch matrices in the order
/// `z1, z2, w1a, w2a, w1b, w2b`.
pub fn total_from_inputs(
    inputs: &[Array2<f64>],
    labels: &[Option<usize>],
    instance_ids: &[usize],
    view_ids: &[usize],
    cfg: &LossConfig,
) -> Result<crate::losses::TotalLoss> {
    let input = BranchOutputs {
        z1: inputs[0].view(),
        z2: inputs[1].view(),
        w1a: inputs[2].view(),
        w2a: inputs[3].view(),
        w1b: inputs[4].view(),
        w2b: inputs[5].view(),
        labels,
        instance_ids,
        view_ids,
    };
    total_loss(&input, cfg)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// One line of the verification report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst_error: f64,
    pub threshold: f64,
    pub cases: usize,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, worst_error: f64, threshold: f64, cases: usize) -> Self {
        Self {
            name: name.into(),
            passed: worst_error <= threshold,
            worst_error,
            threshold,
            cases,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

/// Worst relative disagreement between the vectorized losses and the loop
/// oracles over the given seeds, image counts and dimensions.
pub fn oracle_equivalence(seeds: &[u64], images: &[usize], dims: &[usize], normalize: bool) -> Result<[CheckOutcome; 4]> {
    let cfg = LossConfig {
        normalize_embeddings: normalize,
        // The literal unnormalized reading uses a gentler temperature so the
        // raw dot products stay in a sane range.
        tau: if normalize { 0.1 } else { 1.0 },
        ..LossConfig::default()
    };
    let opts = OracleOptions {
        tau: cfg.tau,
        normalize,
        stabilize: cfg.logit_stabilization,
    };
    let mut worst = [0.0f64; 4];
    let mut cases = 0;
    for &seed in seeds {
        for &n in images {
            for &d in dims {
                let case = RandomCase::new(seed, n, d);
                let batch = case.batch();
                let z = batch.embeddings.view();
                worst[0] = worst[0].max(rel_err(
                    self_contrastive_grad(&batch, &cfg)?.value,
                    naive_self_loss(z, &batch.pair_index, opts),
                ));
                worst[1] = worst[1].max(rel_err(
                    view_loss_grad(&batch, &cfg)?.value,
                    naive_group_loss(z, &batch.instance_ids, opts),
                ));
                worst[2] = worst[2].max(rel_err(
                    sup_loss_grad(&batch, &cfg)?.value,
                    naive_group_loss(z, &batch.labels, opts),
                ));
                worst[3] = worst[3].max(rel_err(
                    barlow_twins_loss(case.w1a.view(), case.w2a.view(), cfg.alpha)?,
                    naive_bt_loss(case.w1a.view(), case.w2a.view(), cfg.alpha),
                ));
                cases += 1;
            }
        }
    }
    let tag = if normalize { "normalized" } else { "unnormalized" };
    Ok([
        CheckOutcome::new(format!("oracle/self/{tag}"), worst[0], ORACLE_TOLERANCE, cases),
        CheckOutcome::new(format!("oracle/view/{tag}"), worst[1], ORACLE_TOLERANCE, cases),
        CheckOutcome::new(format!("oracle/sup/{tag}"), worst[2], ORACLE_TOLERANCE, cases),
        CheckOutcome::new(format!("oracle/bt/{tag}"), worst[3], ORACLE_TOLERANCE, cases),
    ])
}

/// Hand-computable values that both routes must reproduce.
pub fn closed_form_fixtures() -> Result<Vec<CheckOutcome>> {
    let e = std::f64::consts::E;
    let pair = vec![1, 0, 3, 2];
    let ids = vec![0, 0, 1, 1];
    let mut out = Vec::new();

    let identical = Array2::from_elem((4, 3), 0.4);
    let batch = ContrastBatch::new(identical, pair.clone(), ids.clone(), ids.clone(), vec![0; 4])?;
    let cfg = LossConfig::default();
    let target = 4.0 * 3f64.ln();
    let opts = OracleOptions { tau: cfg.tau, normalize: true, stabilize: true };
    let err = rel_err(self_contrastive_grad(&batch, &cfg)?.value, target)
        .max(rel_err(naive_self_loss(batch.embeddings.view(), &pair, opts), target));
    out.push(CheckOutcome::new("fixture/self/identical", err, ORACLE_TOLERANCE, 1));

    let orth = ndarray::array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    let batch = ContrastBatch::new(orth, pair.clone(), ids.clone(), ids, vec![0; 4])?;
    let cfg = LossConfig { tau: 1.0, ..LossConfig::default() };
    let target = 4.0 * ((e + 2.0) / e).ln();
    let opts = OracleOptions { tau: 1.0, normalize: true, stabilize: true };
    let err = rel_err(self_contrastive_grad(&batch, &cfg)?.value, target)
        .max(rel_err(naive_self_loss(batch.embeddings.view(), &pair, opts), target));
    out.push(CheckOutcome::new("fixture/self/orthogonal_pairs", err, ORACLE_TOLERANCE, 1));

    let alpha = 0.005;
    let dup = ndarray::array![[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]];
    let value = barlow_twins_loss(dup.view(), dup.view(), alpha)?;
    out.push(CheckOutcome::new("fixture/bt/duplicate_feature", (value - 2.0 * alpha).abs(), 1e-15, 1));

    let eye = ndarray::array![[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]];
    let value = barlow_twins_loss(eye.view(), eye.view(), alpha)?;
    out.push(CheckOutcome::new("fixture/bt/identity", value.abs(), 0.0, 1));
    Ok(out)
}

/// Central-difference checks of every term and of the composite objective.
pub fn gradient_checks(batches: u64) -> Result<Vec<CheckOutcome>> {
    let cfg = LossConfig::default();
    let mut worst = [0.0f64; 5];
    let mut cases = 0;
    for seed in 0..batches {
        let n = 2 + (seed as usize % 5);
        let d = [4, 8, 16][seed as usize % 3];
        let case = RandomCase::new(1000 + seed, n, d);
        let meta = (case.labels.clone(), case.instance_ids.clone(), case.view_ids.clone());
        let branch_batch = |z1: &Array2<f64>, z2: &Array2<f64>| {
            ContrastBatch::from_branches(z1.view(), z2.view(), &meta.0, &meta.1, &meta.2)
        };

        type Term = fn(&ContrastBatch, &LossConfig) -> Result<crate::losses::LossGrad>;
        let terms: [(usize, Term); 3] = [(0, self_contrastive_grad), (1, view_loss_grad), (2, sup_loss_grad)];
        for (slot, term) in terms {
            if slot == 0 && n < 2 {
                continue;
            }
            let g = term(&case.batch(), &cfg)?.grad;
            let (g1, g2) = deinterleave(&g);
            let r = gradcheck(&[case.z1.clone(), case.z2.clone()], &[g1, g2], GRADCHECK_EPS, |x| {
                Ok(term(&branch_batch(&x[0], &x[1])?, &cfg)?.value)
            })?;
            worst[slot] = worst[slot].max(r.max_rel_error);
        }

        let bt = barlow_twins_grad(case.w1a.view(), case.w2a.view(), cfg.alpha, false)?;
        let r = gradcheck(&[case.w1a.clone(), case.w2a.clone()], &[bt.grad_a, bt.grad_b], GRADCHECK_EPS, |x| {
            barlow_twins_loss(x[0].view(), x[1].view(), cfg.alpha)
        })?;
        worst[3] = worst[3].max(r.max_rel_error);

        // Withhold one label on odd seeds to exercise the partial-label path.
        let labels: Vec<Option<usize>> = case
            .labels
            .iter()
            .enumerate()
            .map(|(b, &y)| if seed % 2 == 1 && b == 0 { None } else { Some(y) })
            .collect();
        let inputs = case.inputs();
        let total = total_from_inputs(&inputs, &labels, &case.instance_ids, &case.view_ids, &cfg)?;
        let analytic = [
            total.grad_z1,
            total.grad_z2,
            total.grad_w1a,
            total.grad_w2a,
            total.grad_w1b,
            total.grad_w2b,
        ];
        let r = gradcheck(&inputs, &analytic, GRADCHECK_EPS, |x| {
            Ok(total_from_inputs(x, &labels, &case.instance_ids, &case.view_ids, &cfg)?
                .components
                .total)
        })?;
        worst[4] = worst[4].max(r.max_rel_error);
        cases += 1;
    }
    let names = ["self", "view", "sup", "bt", "total"];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, w)| CheckOutcome::new(format!("gradcheck/{name}"), w, GRADCHECK_TOLERANCE, cases))
        .collect())
}

/// The redundancy-reduction term is at its minimum when `C = I`, so its
/// numeric gradient must vanish there.
pub fn bt_identity_gradient() -> Result<CheckOutcome> {
    let w = ndarray::array![[1.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 0.7], [0.0, 0.0, 0.0]];
    let g = barlow_twins_grad(w.view(), w.view(), 0.5, false)?;
    let r = gradcheck(&[w.clone(), w], &[g.grad_a, g.grad_b], GRADCHECK_EPS, |x| {
        barlow_twins_loss(x[0].view(), x[1].view(), 0.5)
    })?;
    Ok(CheckOutcome::new("gradcheck/bt_at_identity_abs", r.max_abs_error, 1e-8, 1))
}

pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Special cases where one objective must collapse onto another.
pub fn reduction_identities(seeds: &[u64]) -> Result<Vec<CheckOutcome>> {
    let cfg = LossConfig::default();
    let mut worst = [0.0f64; 3];
    let mut cases = 0;
    for &seed in seeds {
        for n in [2, 4, 6, 8] {
            let case = RandomCase::new(seed, n, 8);
            let own: Vec<usize> = (0..n).collect();
            let self_value = self_contrastive_grad(&case.batch(), &cfg)?.value;

            // Every instance group is one image's two augmentations.
            let b = ContrastBatch::from_branches(case.z1.view(), case.z2.view(), &case.labels, &own, &case.view_ids)?;
            worst[0] = worst[0].max(rel_err(view_loss_grad(&b, &cfg)?.value, self_value));

            let b = ContrastBatch::from_branches(case.z1.view(), case.z2.view(), &own, &case.instance_ids, &case.view_ids)?;
            worst[1] = worst[1].max(rel_err(sup_loss_grad(&b, &cfg)?.value, self_value));

            let zero = LossConfig { gamma: 0.0, beta: 0.0, ..LossConfig::default() };
            let labels: Vec<Option<usize>> = case.labels.iter().map(|&y| Some(y)).collect();
            let total = total_from_inputs(&case.inputs(), &labels, &case.instance_ids, &case.view_ids, &zero)?;
            worst[2] = worst[2].max(rel_err(total.components.total, sup_loss_grad(&case.batch(), &cfg)?.value));
            cases += 1;
        }
    }
    Ok(vec![
        CheckOutcome::new("identity/view_is_self_for_singleton_instances", worst[0], IDENTITY_TOLERANCE, cases),
        CheckOutcome::new("identity/sup_is_self_for_singleton_classes", worst[1], IDENTITY_TOLERANCE, cases),
        CheckOutcome::new("identity/total_is_sup_without_extra_terms", worst[2], IDENTITY_TOLERANCE, cases),
    ])
}

/// Row-permutation and rescaling invariances of every objective.
pub fn invariance_checks(seeds: &[u64]) -> Result<Vec<CheckOutcome>> {
    let cfg = LossConfig::default();
    type Term = fn(&ContrastBatch, &LossConfig) -> Result<crate::losses::LossGrad>;
    let terms: [Term; 3] = [self_contrastive_grad, view_loss_grad, sup_loss_grad];
    let mut worst = [0.0f64; 3];
    let mut cases = 0;
    for &seed in seeds {
        for (n, d) in [(2, 4), (4, 8), (6, 16), (8, 8)] {
            let case = RandomCase::new(seed, n, d);
            let mut rng = rng::stream(seed, Purpose::Eval, 0xfeed, n as u64);
            let batch = case.batch();
            let mut perm: Vec<usize> = (0..batch.rows()).collect();
            perm.shuffle(&mut rng);
            let permuted = batch.permuted(&perm)?;
            let scale = rng.random_range(0.01..100.0);
            let mut scaled = batch.clone();
            scaled.embeddings *= scale;
            for term in terms {
                let v = term(&batch, &cfg)?.value;
                worst[0] = worst[0].max(rel_err(term(&permuted, &cfg)?.value, v));
                worst[1] = worst[1].max(rel_err(term(&scaled, &cfg)?.value, v));
            }

            let v = barlow_twins_loss(case.w1a.view(), case.w2a.view(), cfg.alpha)?;
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let (pa, pb) = (case.w1a.select(Axis(0), &rows), case.w2a.select(Axis(0), &rows));
            worst[0] = worst[0].max(rel_err(barlow_twins_loss(pa.view(), pb.view(), cfg.alpha)?, v));
            let (mut sa, mut sb) = (case.w1a.clone(), case.w2a.clone());
            for mut col in sa.columns_mut().into_iter().chain(sb.columns_mut()) {
                col *= rng.random_range(0.01..100.0);
            }
            worst[2] = worst[2].max(rel_err(barlow_twins_loss(sa.view(), sb.view(), cfg.alpha)?, v));
            cases += 1;
        }
    }
    Ok(vec![
        CheckOutcome::new("invariance/row_permutation", worst[0], IDENTITY_TOLERANCE, cases),
        CheckOutcome::new("invariance/positive_scale", worst[1], IDENTITY_TOLERANCE, cases),
        CheckOutcome::new("invariance/bt_column_rescale", worst[2], IDENTITY_TOLERANCE, cases),
    ])
}

/// Splits an interleaved `2N x d` gradient into its two branches.
pub fn deinterleave(g: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = g.nrows() / 2;
    let mut a = Array2::zeros((n, g.ncols()));
    let mut b = Array2::zeros((n, g.ncols()));
    for i in 0..n {
        a.row_mut(i).assign(&g.row(2 * i));
        b.row_mut(i).assign(&g.row(2 * i + 1));
    }
    (a, b)
}

/// Every oracle, fixture and gradient check at the documented thresholds.
pub fn run_all() -> Result<VerifyReport> {
    let seeds: Vec<u64> = (0..20).collect();
    let mut checks = Vec::new();
    for normalize in [true, false] {
        checks.extend(oracle_equivalence(&seeds, &[2, 4, 6, 8], &[4, 8, 16], normalize)?);
    }
    checks.extend(closed_form_fixtures()?);
    checks.extend(gradient_checks(10)?);
    checks.push(bt_identity_gradient()?);
    checks.extend(reduction_identities(&seeds)?);
    checks.extend(invariance_checks(&seeds)?);
    // Ablation placement of the redundancy term on the final projections.
    let cfg = LossConfig {
        terms: LossTerms { bt: BtPlacement::Final, ..LossTerms::default() },
        ..LossConfig::default()
    };
    let case = RandomCase::new(77, 4, 8);
    let labels: Vec<Option<usize>> = case.labels.iter().map(|&y| Some(y)).collect();
    let inputs = case.inputs();
    let t = total_from_inputs(&inputs, &labels, &case.instance_ids, &case.view_ids, &cfg)?;
    let analytic = [t.grad_z1, t.grad_z2, t.grad_w1a, t.grad_w2a, t.grad_w1b, t.grad_w2b];
    let r = gradcheck(&inputs, &analytic, GRADCHECK_EPS, |x| {
        Ok(total_from_inputs(x, &labels, &case.instance_ids, &case.view_ids, &cfg)?.components.total)
    })?;
    checks.push(CheckOutcome::new("gradcheck/total_bt_final", r.max_rel_error, GRADCHECK_TOLERANCE, 1));

    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
