use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    pub view: String,
    pub n: usize,
    pub correct: usize,
    /// None when the test set holds no image of this view.
    pub accuracy: Option<f64>,
    /// Frontal accuracy minus this view's; None if either is undefined.
    pub drop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub class: String,
    pub n: usize,
    pub correct: usize,
    /// None (not zero) for a class absent from the test set.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub overall_accuracy: f64,
    pub n_test: usize,
    pub fold_id: Option<usize>,
    /// Free-form description of how the test set was drawn.
    pub split: String,
    pub frontal_view: String,
    pub per_view: Vec<ViewMetric>,
    pub per_class: Vec<ClassMetric>,
    pub class_names: Vec<String>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn from_predictions(ds: &Dataset, indices: &[usize], predictions: &[usize], fold_id: Option<usize>, split: &str) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty test set"));
        }
        if indices.len() != predictions.len() {
            return Err(Error::invalid(format!("{} predictions for {} test images", predictions.len(), indices.len())));
        }
        let (c, v) = (ds.num_classes(), ds.num_views());
        let mut confusion = vec![vec![0usize; c]; c];
        let mut view_n = vec![0usize; v];
        let mut view_ok = vec![0usize; v];
        for (&i, &p) in indices.iter().zip(predictions) {
            let s = ds.samples.get(i).ok_or_else(|| Error::invalid(format!("test index {i} out of range")))?;
            if p >= c {
                return Err(Error::invalid(format!("prediction {p} outside {c} classes")));
            }
            confusion[s.label][p] += 1;
            view_n[s.view] += 1;
            view_ok[s.view] += usize::from(p == s.label);
        }
        let ratio = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
        let frontal = ds.frontal_view();
        let frontal_acc = ratio(view_ok[frontal], view_n[frontal]);
        let per_view = (0..v)
            .map(|j| {
                let accuracy = ratio(view_ok[j], view_n[j]);
                ViewMetric {
                    view: ds.view_names[j].clone(),
                    n: view_n[j],
                    correct: view_ok[j],
                    accuracy,
                    drop: if j == frontal { frontal_acc.map(|_| 0.0) } else { frontal_acc.zip(accuracy).map(|(f, a)| f - a) },
                }
            })
            .collect();
        let per_class = (0..c)
            .map(|k| {
                let n: usize = confusion[k].iter().sum();
                ClassMetric { class: ds.class_names[k].clone(), n, correct: confusion[k][k], accuracy: ratio(confusion[k][k], n) }
            })
            .collect();
        let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
        let report = MetricsReport {
            schema_version: SCHEMA_VERSION,
            overall_accuracy: trace as f64 / indices.len() as f64,
            n_test: indices.len(),
            fold_id,
            split: split.to_string(),
            frontal_view: ds.view_names[frontal].clone(),
            per_view,
            per_class,
            class_names: ds.class_names.clone(),
            confusion,
        };
        report.check(ds, indices)?;
        Ok(report)
    }

    /// Accounting identities every emitted report satisfies.
    fn check(&self, ds: &Dataset, indices: &[usize]) -> Result<()> {
        let mut counts = vec![0usize; ds.num_classes()];
        for &i in indices {
            counts[ds.samples[i].label] += 1;
        }
        for (k, row) in self.confusion.iter().enumerate() {
            if row.iter().sum::<usize>() != counts[k] {
                return Err(Error::Integrity(format!("confusion row {k} does not sum to the class count")));
            }
        }
        let trace: usize = (0..counts.len()).map(|k| self.confusion[k][k]).sum();
        if self.overall_accuracy != trace as f64 / self.n_test as f64 {
            return Err(Error::Integrity("overall accuracy differs from trace / n".into()));
        }
        let n: usize = self.per_view.iter().map(|m| m.n).sum();
        let ok: usize = self.per_view.iter().map(|m| m.correct).sum();
        if n != self.n_test || ok != trace {
            return Err(Error::Integrity("per-view counts do not partition the test set".into()));
        }
        let weighted: f64 = self.per_view.iter().filter_map(|m| m.accuracy.map(|a| a * m.n as f64)).sum::<f64>() / n as f64;
        if (weighted - self.overall_accuracy).abs() > 1e-12 {
            return Err(Error::Integrity("weighted per-view accuracy differs from overall".into()));
        }
        Ok(())
    }

    pub fn view_accuracy(&self, view: &str) -> Option<f64> {
        self.per_view.iter().find(|m| m.view == view).and_then(|m| m.accuracy)
    }

    /// Largest drop against the frontal view over views that have one.
    pub fn max_view_drop(&self) -> Option<f64> {
        self.per_view.iter().filter_map(|m| m.drop).reduce(f64::max)
    }
}

/// Drop of every view against the frontal view. Views with no test images
/// are left out.
pub fn view_drop_report(report: &MetricsReport) -> Result<Vec<(String, f64)>> {
    let frontal = report
        .view_accuracy(&report.frontal_view)
        .ok_or_else(|| Error::invalid(format!("frontal view {} has no test images", report.frontal_view)))?;
    Ok(report.per_view.iter().filter_map(|m| m.accuracy.map(|a| (m.view.clone(), frontal - a))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCurveRow {
    pub fraction: f64,
    pub viewfx_accuracy: f64,
    pub baseline_accuracy: f64,
    pub gap: f64,
}

/// Runs `run(fraction) -> (viewfx accuracy, baseline accuracy)` for each
/// fraction in order.
pub fn label_fraction_curve(fractions: &[f64], mut run: impl FnMut(f64) -> Result<(f64, f64)>) -> Result<Vec<LabelCurveRow>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::invalid(format!("label fraction must lie in (0, 1], got {f}")));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let (v, b) = run(fraction)?;
            Ok(LabelCurveRow { fraction, viewfx_accuracy: v, baseline_accuracy: b, gap: v - b })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (k - 1 denominator).
    pub sd: f64,
}

impl CvSummary {
    pub fn from_accuracies(acc: Vec<f64>) -> Result<Self> {
        if acc.len() < 2 {
            return Err(Error::invalid("standard deviation needs at least 2 folds"));
        }
        let k = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / k;
        let sd = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        Ok(CvSummary { fold_accuracies: acc, mean, sd })
    }
}

/// Runs the harness on every fold and summarises overall accuracy.
pub fn cross_validate(
    folds: &[crate::data::Fold],
    mut run_fold: impl FnMut(&crate::data::Fold) -> Result<MetricsReport>,
) -> Result<(CvSummary, Vec<MetricsReport>)> {
    let reports = folds.iter().map(&mut run_fold).collect::<Result<Vec<_>>>()?;
    let summary = CvSummary::from_accuracies(reports.iter().map(|r| r.overall_accuracy).collect())?;
    Ok((summary, reports))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn write_per_view_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let rows = std::iter::once(["view".into(), "n".into(), "correct".into(), "accuracy".into(), "drop".into()]).chain(
        report.per_view.iter().map(|m| [m.view.clone(), m.n.to_string(), m.correct.to_string(), opt(m.accuracy), opt(m.drop)]),
    );
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_confusion_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("true\\pred".to_string()).chain(report.class_names.iter().cloned()).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        let rec: Vec<String> = std::iter::once(name.clone()).chain(row.iter().map(|c| c.to_string())).collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_label_curve_csv(rows: &[LabelCurveRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn ds() -> Dataset {
        synth_generate(&SynthConfig { subjects: 4, image_size: 16, ..SynthConfig::default() }, 1, None).unwrap()
    }

    #[test]
    fn perfect_predictions_give_diagonal() {
        let d = ds();
        let idx: Vec<usize> = (0..d.len()).collect();
        let preds: Vec<usize> = d.samples.iter().map(|s| s.label).collect();
        let r = MetricsReport::from_predictions(&d, &idx, &preds, Some(0), "test").unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        for (k, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), row[k]);
        }
        let drops = view_drop_report(&r).unwrap();
        assert!(drops.iter().all(|(_, d)| *d == 0.0));
    }

    #[test]
    fn absent_class_is_undefined_and_missing_frontal_errors() {
        let d = ds();
        let frontal = d.frontal_view();
        let idx: Vec<usize> = (0..d.len()).filter(|&i| d.samples[i].label != 0 && d.samples[i].view != frontal).collect();
        let preds = vec![1; idx.len()];
        let r = MetricsReport::from_predictions(&d, &idx, &preds, None, "test").unwrap();
        assert_eq!(r.per_class[0].accuracy, None);
        assert!(r.per_class[1].accuracy.is_some());
        assert!(r.per_view.iter().all(|m| m.drop.is_none()));
        assert!(matches!(view_drop_report(&r), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn drop_is_frontal_minus_view() {
        let d = ds();
        let idx: Vec<usize> = (0..d.len()).collect();
        // Correct on the frontal view only.
        let preds: Vec<usize> = d.samples.iter().map(|s| if s.view == d.frontal_view() { s.label } else { (s.label + 1) % 8 }).collect();
        let r = MetricsReport::from_predictions(&d, &idx, &preds, None, "test").unwrap();
        assert_eq!(r.max_view_drop(), Some(1.0));
        assert_eq!(r.view_accuracy(&r.frontal_view), Some(1.0));
        assert!((r.overall_accuracy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sample_sd() {
        let s = CvSummary::from_accuracies(vec![0.5, 0.7, 0.9]).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.sd - 0.2).abs() < 1e-12);
    }

    #[test]
    fn csv_outputs() {
        let d = ds();
        let idx: Vec<usize> = (0..d.len()).collect();
        let preds: Vec<usize> = d.samples.iter().map(|s| s.label).collect();
        let r = MetricsReport::from_predictions(&d, &idx, &preds, None, "test").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_per_view_csv(&r, &dir.path().join("v.csv")).unwrap();
        write_confusion_csv(&r, &dir.path().join("c.csv")).unwrap();
        let rows = label_fraction_curve(&[1.0, 0.1], |f| Ok((f, f / 2.0))).unwrap();
        write_label_curve_csv(&rows, &dir.path().join("l.csv")).unwrap();
        let v = std::fs::read_to_string(dir.path().join("v.csv")).unwrap();
        assert_eq!(v.lines().count(), 6);
        let l = std::fs::read_to_string(dir.path().join("l.csv")).unwrap();
        assert!(l.starts_with("fraction,viewfx_accuracy,baseline_accuracy,gap"));
        assert!(label_fraction_curve(&[0.0], |_| Ok((0.0, 0.0))).is_err());
    }
}
