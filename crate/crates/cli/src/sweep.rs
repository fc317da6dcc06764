//! Sensitivity grids and ablations. Every cell is an independent run
//! directory under `cells/`; results are collected into `reports/`.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use viewinv_core::augment::AugmentPolicy;
use viewinv_core::eval::{label_fraction_curve, write_label_curve_csv, CvSummary, MetricsReport};
use viewinv_core::losses::{BtPlacement, LossTerms};

use crate::config::{parse_grid, set_path, RunConfig};
use crate::run::{prepare, run_baseline, run_eval, run_finetune, run_pretrain, write_json, RunDir};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct SweepSpec {
    pub grids: Vec<String>,
    pub ablate_loss: bool,
    pub ablate_aug: bool,
    pub label_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cv: Option<usize>,
    pub with_baseline: bool,
}

/// The loss-term combinations of the ablation table, full objective first.
pub fn loss_ablation() -> Vec<(&'static str, LossTerms)> {
    let t = |sup, view, bt| LossTerms { sup, view, bt };
    use BtPlacement::*;
    vec![
        ("full", t(true, true, Intermediate)),
        ("sup+bt_inter", t(true, false, Intermediate)),
        ("view+bt_inter", t(false, true, Intermediate)),
        ("sup+bt_final", t(true, false, Final)),
        ("view+bt_final", t(false, true, Final)),
        ("sup+view", t(true, true, Off)),
        ("sup", t(true, false, Off)),
        ("view", t(false, true, Off)),
        ("bt", t(false, false, Intermediate)),
    ]
}

/// All pretraining augmentations, then each one removed in turn.
pub fn aug_ablation(base: &AugmentPolicy) -> Vec<(&'static str, AugmentPolicy)> {
    let drop = |f: fn(&mut AugmentPolicy)| {
        let mut p = base.clone();
        f(&mut p);
        p
    };
    vec![
        ("all", base.clone()),
        ("no_crop", drop(|p| p.random_crop = false)),
        ("no_flip", drop(|p| p.hflip = false)),
        ("no_jitter", drop(|p| p.color_jitter.enabled = false)),
        ("no_gray", drop(|p| p.grayscale = false)),
        ("no_blur", drop(|p| p.blur = false)),
    ]
}

fn with_seed(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.pretrain.seed = seed;
    c.finetune.seed = seed;
    c.baseline.seed = seed;
    c
}

fn cells(base: &RunConfig, spec: &SweepSpec) -> Result<Vec<(String, RunConfig)>, CliError> {
    let mut out = vec![(String::new(), base.to_value())];
    for g in &spec.grids {
        let (key, values) = parse_grid(g)?;
        let short = key.rsplit('.').next().unwrap_or(&key).to_string();
        let mut next = Vec::new();
        for (name, doc) in &out {
            for v in &values {
                let mut d = doc.clone();
                set_path(&mut d, &key, v.clone())?;
                let label = format!("{short}={}", v.to_string().trim_matches('"'));
                next.push((if name.is_empty() { label } else { format!("{name},{label}") }, d));
            }
        }
        out = next;
    }
    let mut cfgs = out.into_iter().map(|(n, d)| Ok((n, RunConfig::from_value(d)?))).collect::<Result<Vec<_>, CliError>>()?;
    if spec.ablate_loss {
        cfgs = cfgs
            .into_iter()
            .flat_map(|(n, c)| {
                loss_ablation().into_iter().map(move |(name, terms)| {
                    let mut c = c.clone();
                    c.pretrain.loss.terms = terms;
                    (join(&n, name), c)
                })
            })
            .collect();
    }
    if spec.ablate_aug {
        cfgs = cfgs
            .into_iter()
            .flat_map(|(n, c)| {
                aug_ablation(&c.pretrain.augment).into_iter().map(move |(name, aug)| {
                    let mut c = c.clone();
                    c.pretrain.augment = aug;
                    (join(&n, name), c)
                })
            })
            .collect();
    }
    for (_, c) in &cfgs {
        c.validate()?;
    }
    Ok(cfgs)
}

fn join(a: &str, b: &str) -> String {
    if a.is_empty() {
        b.to_string()
    } else {
        format!("{a},{b}")
    }
}

fn dir_name(cell: &str, model: &str, seed: u64) -> String {
    let safe: String = cell.chars().map(|c| if c.is_ascii_alphanumeric() || "._-=+".contains(c) { c } else { '_' }).collect();
    let safe = if safe.is_empty() { "base".to_string() } else { safe };
    format!("{safe}__{model}__seed{seed}")
}

/// One full pipeline in its own run directory.
pub fn run_cell(root: &Path, name: &str, cfg: &RunConfig, baseline: bool) -> Result<MetricsReport, CliError> {
    let run = RunDir::open(root, cfg)?;
    let data = prepare(cfg)?;
    if baseline {
        let ck = run_baseline(cfg, &run, &data)?;
        return run_eval(&run, &data, "baseline", &ck);
    }
    let pre = run_pretrain(cfg, &run, &data, None, 0)?;
    let ck = run_finetune(cfg, &run, &data, &pre)?;
    let r = run_eval(&run, &data, "finetune", &ck)?;
    eprintln!("cell {name}: accuracy {:.4}", r.overall_accuracy);
    Ok(r)
}

#[derive(Debug, Serialize)]
struct Row {
    cell: String,
    model: String,
    seed: u64,
    accuracy: f64,
    max_view_drop: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    cell: String,
    model: String,
    runs: usize,
    mean_accuracy: f64,
    sd_accuracy: Option<f64>,
}

fn csv_out<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn run_sweep(base: &RunConfig, root: &Path, spec: &SweepSpec) -> Result<(), CliError> {
    let top = RunDir::open(root, base)?;
    let cells_dir = root.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", cells_dir.display())))?;
    let seeds = if spec.seeds.is_empty() { vec![base.pretrain.seed] } else { spec.seeds.clone() };

    if let Some(k) = spec.cv {
        let mut acc = (Vec::new(), Vec::new());
        for fold in 0..k {
            let mut c = base.clone();
            c.split.folds = k;
            c.split.fold = fold;
            c.validate()?;
            let name = format!("fold{fold}");
            acc.0.push(run_cell(&cells_dir.join(dir_name(&name, "viewfx", c.pretrain.seed)), &name, &c, false)?.overall_accuracy);
            if spec.with_baseline {
                acc.1.push(run_cell(&cells_dir.join(dir_name(&name, "baseline", c.pretrain.seed)), &name, &c, true)?.overall_accuracy);
            }
        }
        let mut out = serde_json::Map::new();
        out.insert("viewfx".into(), serde_json::to_value(CvSummary::from_accuracies(acc.0)?).expect("serializes"));
        if spec.with_baseline {
            out.insert("baseline".into(), serde_json::to_value(CvSummary::from_accuracies(acc.1)?).expect("serializes"));
        }
        return write_json(&top.reports().join("cv.json"), &Value::Object(out));
    }

    if !spec.label_fractions.is_empty() {
        if let Some(f) = spec.label_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Config(format!("label fraction {f} outside (0, 1]")));
        }
        let core = |e: CliError| viewinv_core::Error::InvalidInput(e.to_string());
        let rows = label_fraction_curve(&spec.label_fractions, |f| {
            let mut c = with_seed(base, seeds[0]);
            c.label_fraction = f;
            c.validate().map_err(core)?;
            let name = format!("label_fraction={f}");
            let v = run_cell(&cells_dir.join(dir_name(&name, "viewfx", seeds[0])), &name, &c, false).map_err(core)?;
            let b = run_cell(&cells_dir.join(dir_name(&name, "baseline", seeds[0])), &name, &c, true).map_err(core)?;
            Ok((v.overall_accuracy, b.overall_accuracy))
        })?;
        return write_label_curve_csv(&rows, &top.reports().join("label_curve.csv")).map_err(CliError::from);
    }

    let mut rows = Vec::new();
    for (name, cfg) in cells(base, spec)? {
        for &seed in &seeds {
            let c = with_seed(&cfg, seed);
            let models: &[bool] = if spec.with_baseline { &[false, true] } else { &[false] };
            for &baseline in models {
                let model = if baseline { "baseline" } else { "viewfx" };
                let r = run_cell(&cells_dir.join(dir_name(&name, model, seed)), &name, &c, baseline)?;
                rows.push(Row { cell: name.clone(), model: model.into(), seed, accuracy: r.overall_accuracy, max_view_drop: r.max_view_drop() });
            }
        }
    }
    csv_out(&top.reports().join("sweep.csv"), &rows)?;
    let mut summary: Vec<SummaryRow> = Vec::new();
    for r in &rows {
        if summary.iter().any(|s| s.cell == r.cell && s.model == r.model) {
            continue;
        }
        let acc: Vec<f64> = rows.iter().filter(|x| x.cell == r.cell && x.model == r.model).map(|x| x.accuracy).collect();
        let (mean, sd) = match CvSummary::from_accuracies(acc.clone()) {
            Ok(s) => (s.mean, Some(s.sd)),
            Err(_) => (acc[0], None),
        };
        summary.push(SummaryRow { cell: r.cell.clone(), model: r.model.clone(), runs: acc.len(), mean_accuracy: mean, sd_accuracy: sd });
    }
    csv_out(&top.reports().join("sweep_summary.csv"), &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_ablation_has_nine_distinct_rows() {
        let rows = loss_ablation();
        assert_eq!(rows.len(), 9);
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                assert_ne!(a.1, b.1);
            }
        }
    }

    #[test]
    fn grid_cells_are_cartesian() {
        let spec = SweepSpec { grids: vec!["gamma=0.1,0.5".into(), "beta=0,0.9".into()], ablate_loss: true, ..Default::default() };
        let c = cells(&RunConfig::default(), &spec).unwrap();
        assert_eq!(c.len(), 2 * 2 * 9);
        assert_eq!(c[0].0, "gamma=0.1,beta=0,full");
        assert_eq!(c[0].1.pretrain.loss.gamma, 0.1);
        assert!(cells(&RunConfig::default(), &SweepSpec { grids: vec!["nope=1".into()], ..Default::default() }).is_err());
    }
}
