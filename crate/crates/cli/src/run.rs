//! Run directories and the pipeline stages behind each subcommand.
//!
//! Layout: `config.json`, `logs.jsonl`, `checkpoints/`, `metrics/`,
//! `reports/`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use viewinv_core::data::{load_manifest, split_folds, subsample_labels, synth_generate, Dataset};
use viewinv_core::eval::{evaluate, write_confusion_csv, write_per_view_csv, MetricsReport};
use viewinv_core::model::{Checkpoint, Classifier, EncoderConfig, RngState};
use viewinv_core::train::{finetune, train_baseline, EpochLog, FinetuneConfig, Pretrainer, SupervisedOutcome};

use crate::config::RunConfig;
use crate::CliError;

pub struct RunDir {
    pub root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

impl RunDir {
    /// Creates the layout and echoes the resolved config. An existing
    /// `config.json` must match, so stages of one run cannot mix configs.
    pub fn open(root: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        for sub in ["checkpoints", "metrics", "reports"] {
            fs::create_dir_all(root.join(sub)).map_err(|e| io_err(root, e))?;
        }
        let path = root.join("config.json");
        if path.exists() {
            let old = RunConfig::load(Some(&path))?;
            if old != *cfg {
                return Err(CliError::Config(format!("{} holds a different config; use a fresh run directory", path.display())));
            }
        } else {
            write_json(&path, &cfg.to_value())?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn metrics(&self, model: &str) -> Result<PathBuf, CliError> {
        let p = self.root.join("metrics").join(model);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn log(&self, l: &EpochLog) -> Result<(), CliError> {
        let path = self.root.join("logs.jsonl");
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        let line = serde_json::to_string(l).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))
    }
}

/// Dataset with its train/test split and a description of the split.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub fold_id: usize,
    pub provenance: String,
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ds = match &cfg.data.manifest {
        Some(path) => {
            let mut ds = load_manifest(path)?;
            ds.materialize(cfg.encoder.input_channels)?;
            ds
        }
        None => synth_generate(&cfg.data.synth, cfg.data.synth_seed, None)?,
    };
    Ok(ds)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let ds = load_data(cfg)?;
    let s = &cfg.split;
    let fold = split_folds(&ds, s.folds, s.seed, s.grouping)?.swap_remove(s.fold);
    let source = match &cfg.data.manifest {
        Some(p) => p.display().to_string(),
        None => format!("synthetic (seed {})", cfg.data.synth_seed),
    };
    let provenance = format!("{source}; fold {} of {} ({:?}-grouped, split seed {})", s.fold, s.folds, s.grouping, s.seed).to_lowercase();
    let train = subsample_labels(&ds.subset(&fold.train), cfg.label_fraction, cfg.label_seed)?.dataset;
    Ok(Prepared { test: ds.subset(&fold.test), train, fold_id: fold.id, provenance })
}

/// Contrastive pretraining with a checkpoint every `every` epochs and at
/// the end. `resume` continues from a saved pretraining checkpoint.
pub fn run_pretrain(cfg: &RunConfig, run: &RunDir, data: &Prepared, resume: Option<&Path>, every: usize) -> Result<PathBuf, CliError> {
    let mut t = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let t = Pretrainer::resume(&data.train, &ck)?;
            if t.config != cfg.pretrain {
                return Err(CliError::Config("resume checkpoint was written with a different pretrain config".into()));
            }
            t
        }
        None => Pretrainer::new(&data.train, &cfg.encoder, &cfg.pretrain)?,
    };
    let out = run.checkpoint("pretrain");
    while !t.finished() {
        let log = t.run_epoch()?;
        run.log(&log)?;
        if every > 0 && t.epoch % every == 0 {
            t.checkpoint().save(&out)?;
        }
    }
    t.checkpoint().save(&out)?;
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    model: String,
    best_epoch: usize,
    best_val_accuracy: f64,
    train_accuracy: f64,
}

fn save_classifier(run: &RunDir, name: &str, clf: &Classifier, cfg: &FinetuneConfig, out: &SupervisedOutcome) -> Result<PathBuf, CliError> {
    let mut ck = Checkpoint::new(
        "classifier",
        json!({ "encoder": clf.encoder.config, "num_classes": clf.num_classes, "finetune": cfg }),
        out.best_epoch,
        RngState { seed: cfg.seed, next_epoch: cfg.epochs },
    );
    ck.capture(clf);
    let path = run.checkpoint(name);
    ck.save(&path)?;
    write_json(
        &run.metrics(name)?.join("training.json"),
        &TrainSummary {
            model: name.into(),
            best_epoch: out.best_epoch,
            best_val_accuracy: out.best_val_accuracy,
            train_accuracy: out.train_accuracy,
        },
    )?;
    Ok(path)
}

pub fn load_classifier(path: &Path) -> Result<Classifier, CliError> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != "classifier" {
        return Err(CliError::Runtime(format!("{}: expected a classifier checkpoint, found {:?}", path.display(), ck.kind)));
    }
    let enc: EncoderConfig = serde_json::from_value(ck.config["encoder"].clone()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let k = ck.config["num_classes"].as_u64().ok_or_else(|| CliError::Runtime(format!("{}: missing num_classes", path.display())))?;
    let mut clf = Classifier::new(&enc, k as usize, 0)?;
    ck.restore(&mut clf, "")?;
    Ok(clf)
}

pub fn run_finetune(cfg: &RunConfig, run: &RunDir, data: &Prepared, pretrained: &Path) -> Result<PathBuf, CliError> {
    let ck = Checkpoint::load(pretrained)?;
    let mut log_err = Ok(());
    let out = finetune(&data.train, &ck, &cfg.finetune, &mut |l| {
        if log_err.is_ok() {
            log_err = run.log(l);
        }
    })?;
    log_err?;
    save_classifier(run, "finetune", &out.classifier, &cfg.finetune, &out)
}

pub fn run_baseline(cfg: &RunConfig, run: &RunDir, data: &Prepared) -> Result<PathBuf, CliError> {
    let mut log_err = Ok(());
    let out = train_baseline(&data.train, &cfg.encoder, &cfg.baseline, &mut |l| {
        if log_err.is_ok() {
            log_err = run.log(l);
        }
    })?;
    log_err?;
    save_classifier(run, "baseline", &out.classifier, &cfg.baseline, &out)
}

/// Evaluates a classifier checkpoint on the test split and writes
/// `metrics.json`, `per_view.csv` and `confusion.csv` under `metrics/<model>/`.
pub fn run_eval(run: &RunDir, data: &Prepared, model: &str, checkpoint: &Path) -> Result<MetricsReport, CliError> {
    let mut clf = load_classifier(checkpoint)?;
    let idx: Vec<usize> = (0..data.test.len()).collect();
    let report = evaluate(&mut clf, &data.test, &idx, Some(data.fold_id), &data.provenance)?;
    let dir = run.metrics(model)?;
    write_json(&dir.join("metrics.json"), &report)?;
    write_per_view_csv(&report, &dir.join("per_view.csv"))?;
    write_confusion_csv(&report, &dir.join("confusion.csv"))?;
    Ok(report)
}
