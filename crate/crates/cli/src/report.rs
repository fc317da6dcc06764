//! `report`: collects metrics and logs of a run directory into CSV tables
//! and PNG charts under `reports/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use viewinv_core::eval::{LabelCurveRow, MetricsReport};
use viewinv_core::train::EpochLog;

use crate::plot::{heatmap, line_chart};
use crate::CliError;

#[derive(Debug, Serialize)]
struct ModelRow {
    model: String,
    accuracy: f64,
    max_view_drop: Option<f64>,
    n_test: usize,
}

#[derive(Debug, Serialize)]
struct ViewRow {
    model: String,
    view: String,
    accuracy: Option<f64>,
    drop: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LossRow {
    stage: String,
    epoch: usize,
    loss_total: f64,
    val_metric: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct SweepRow {
    cell: String,
    model: String,
    #[allow(dead_code)]
    seed: u64,
    accuracy: f64,
}

fn rt(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| rt(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| rt(path, e))?;
    }
    w.flush().map_err(|e| rt(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| rt(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| rt(path, e))
}

/// Returns the list of files written.
pub fn build_report(root: &Path) -> Result<Vec<String>, CliError> {
    let reports = root.join("reports");
    fs::create_dir_all(&reports).map_err(|e| rt(&reports, e))?;
    let mut written = Vec::new();
    let mut note = |name: &str| written.push(name.to_string());

    let mut models = Vec::new();
    if let Ok(entries) = fs::read_dir(root.join("metrics")) {
        let mut dirs: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("metrics.json").exists()).collect();
        dirs.sort();
        for d in dirs {
            let path = d.join("metrics.json");
            let text = fs::read_to_string(&path).map_err(|e| rt(&path, e))?;
            let r: MetricsReport = serde_json::from_str(&text).map_err(|e| rt(&path, e))?;
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            models.push((name, r));
        }
    }
    if !models.is_empty() {
        let rows: Vec<ModelRow> = models
            .iter()
            .map(|(m, r)| ModelRow { model: m.clone(), accuracy: r.overall_accuracy, max_view_drop: r.max_view_drop(), n_test: r.n_test })
            .collect();
        write_csv(&reports.join("summary.csv"), &rows)?;
        note("summary.csv");
        let views: Vec<ViewRow> = models
            .iter()
            .flat_map(|(m, r)| r.per_view.iter().map(move |v| ViewRow { model: m.clone(), view: v.view.clone(), accuracy: v.accuracy, drop: v.drop }))
            .collect();
        write_csv(&reports.join("view_drop.csv"), &views)?;
        note("view_drop.csv");
        let series: Vec<Vec<(f64, f64)>> = models
            .iter()
            .map(|(_, r)| r.per_view.iter().enumerate().filter_map(|(i, v)| v.drop.map(|d| (i as f64, d))).collect())
            .collect();
        line_chart(&series, &reports.join("view_drop.png"))?;
        note("view_drop.png");
        for (m, r) in &models {
            let name = format!("confusion_{m}.png");
            heatmap(&r.confusion, &reports.join(&name))?;
            note(&name);
        }
    }

    let logs = root.join("logs.jsonl");
    if logs.exists() {
        let text = fs::read_to_string(&logs).map_err(|e| rt(&logs, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<EpochLog>(l).map_err(|e| rt(&logs, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<LossRow> = entries
            .iter()
            .map(|l| LossRow { stage: l.stage.clone(), epoch: l.epoch, loss_total: l.loss_total, val_metric: l.val_metric })
            .collect();
        write_csv(&reports.join("loss_curve.csv"), &rows)?;
        note("loss_curve.csv");
        let mut stages: Vec<&str> = Vec::new();
        for l in &entries {
            if !stages.contains(&l.stage.as_str()) {
                stages.push(&l.stage);
            }
        }
        // Each stage scaled to its first epoch so they share one axis.
        let series: Vec<Vec<(f64, f64)>> = stages
            .iter()
            .map(|s| {
                let pts: Vec<_> = entries.iter().filter(|l| l.stage == *s).map(|l| (l.epoch as f64, l.loss_total)).collect();
                let first = pts.first().map(|p| p.1.abs()).filter(|v| *v > 0.0).unwrap_or(1.0);
                pts.into_iter().map(|(x, y)| (x, y / first)).collect()
            })
            .collect();
        line_chart(&series, &reports.join("loss_curve.png"))?;
        note("loss_curve.png");
    }

    let curve = reports.join("label_curve.csv");
    if curve.exists() {
        let rows: Vec<LabelCurveRow> = read_csv(&curve)?;
        let v = rows.iter().map(|r| (r.fraction, r.viewfx_accuracy)).collect();
        let b = rows.iter().map(|r| (r.fraction, r.baseline_accuracy)).collect();
        line_chart(&[v, b], &reports.join("label_curve.png"))?;
        note("label_curve.png");
    }

    // A single numeric grid axis (e.g. pretraining epochs) becomes a curve.
    let sweep = reports.join("sweep.csv");
    if sweep.exists() {
        let rows: Vec<SweepRow> = read_csv(&sweep)?;
        let numeric = |cell: &str| cell.split_once('=').filter(|(k, _)| !k.contains(',')).and_then(|(_, v)| v.parse::<f64>().ok());
        if !rows.is_empty() && rows.iter().all(|r| numeric(&r.cell).is_some()) {
            let mut series = Vec::new();
            for model in ["viewfx", "baseline"] {
                let mut pts: Vec<(f64, f64)> = Vec::new();
                for r in rows.iter().filter(|r| r.model == model) {
                    let x = numeric(&r.cell).expect("checked");
                    let same: Vec<f64> = rows.iter().filter(|o| o.model == model && o.cell == r.cell).map(|o| o.accuracy).collect();
                    if !pts.iter().any(|p| p.0 == x) {
                        pts.push((x, same.iter().sum::<f64>() / same.len() as f64));
                    }
                }
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                if !pts.is_empty() {
                    series.push(pts);
                }
            }
            line_chart(&series, &reports.join("sweep.png"))?;
            note("sweep.png");
        }
    }
    Ok(written)
}
