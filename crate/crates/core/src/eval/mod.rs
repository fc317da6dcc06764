//! Accuracy reports: overall, per view, drop against the frontal view,
//! confusion matrices, label-fraction curves and k-fold summaries.

mod harness;
mod report;

pub use harness::{Harness, RunResult};
pub use report::{
    cross_validate, label_fraction_curve, view_drop_report, write_confusion_csv, write_label_curve_csv, write_per_view_csv,
    ClassMetric, CvSummary, LabelCurveRow, MetricsReport, ViewMetric,
};

use crate::augment::{augment, policy_for_stage, Stage};
use crate::data::{stack, Dataset};
use crate::model::Classifier;
use crate::rng::{self, Purpose};
use crate::Result;

const EVAL_BATCH: usize = 256;

/// Single-image inference without augmentation (inputs are only resized).
pub fn predict(clf: &mut Classifier, ds: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    let cfg = clf.encoder.config.clone();
    let policy = policy_for_stage(Stage::Test);
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let mut imgs = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let src = crate::train::load_image(ds, i, cfg.input_channels)?;
            // The test policy consumes no draws; the stream only satisfies the signature.
            imgs.push(augment(&src, &policy, cfg.input_size, &mut rng::stream(0, Purpose::Eval, 0, 0)));
        }
        let logits = clf.forward(&stack(&imgs), false)?;
        for col in logits.columns() {
            out.push((0..col.len()).fold(0, |best, j| if col[j] > col[best] { j } else { best }));
        }
    }
    Ok(out)
}

pub fn evaluate(clf: &mut Classifier, ds: &Dataset, indices: &[usize], fold_id: Option<usize>, split: &str) -> Result<MetricsReport> {
    let preds = predict(clf, ds, indices)?;
    MetricsReport::from_predictions(ds, indices, &preds, fold_id, split)
}
