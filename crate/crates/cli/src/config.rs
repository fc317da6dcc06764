//! Run configuration: one JSON document covering data, split, model and
//! both training stages. Unknown fields are rejected with their path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use viewinv_core::data::{FoldGrouping, SynthConfig};
use viewinv_core::model::EncoderConfig;
use viewinv_core::train::{FinetuneConfig, PretrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `manifest.csv` of an on-disk dataset; without it a synthetic dataset
    /// is generated in memory from `synth`.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { manifest: None, synth: SynthConfig::default(), synth_seed: 0 }
    }
}

/// The test set is fold `fold` of a `folds`-way split; the rest trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub folds: usize,
    pub fold: usize,
    pub grouping: FoldGrouping,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { folds: 5, fold: 0, grouping: FoldGrouping::Subject, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Used by `train-baseline`; same schema as `finetune`.
    pub baseline: FinetuneConfig,
    /// Fraction of capture groups per class that keep their labels.
    pub label_fraction: f64,
    pub label_seed: u64,
}

/// Learning rate of both supervised stages at desk scale. The stage
/// default (1e-4) decays to nothing under the plateau schedule on the small
/// desk validation split before either model leaves chance.
pub const DESK_FINETUNE_LR: f64 = 1e-3;

impl Default for RunConfig {
    fn default() -> Self {
        let supervised = FinetuneConfig { base_lr: DESK_FINETUNE_LR, ..FinetuneConfig::default() };
        RunConfig {
            data: DataConfig::default(),
            split: SplitConfig::default(),
            encoder: EncoderConfig::desk(),
            pretrain: PretrainConfig::default(),
            finetune: supervised.clone(),
            baseline: supervised,
            label_fraction: 1.0,
            label_seed: 0,
        }
    }
}

/// Overlays `over` onto `base` object by object; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: viewinv_core::Error| CliError::Config(e.to_string());
        self.encoder.validate().map_err(bad)?;
        self.pretrain.validate().map_err(bad)?;
        self.finetune.validate().map_err(bad)?;
        self.baseline.validate().map_err(bad)?;
        if self.data.manifest.is_none() {
            self.data.synth.validate().map_err(bad)?;
        }
        if self.split.folds < 2 || self.split.fold >= self.split.folds {
            return Err(CliError::Config(format!("split: fold {} of {} folds is not valid", self.split.fold, self.split.folds)));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(CliError::Config(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction)));
        }
        Ok(())
    }

    /// Fields absent from `v` take the values of `RunConfig::default()`,
    /// at any depth.
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        let mut doc = Self::default().to_value();
        merge(&mut doc, v);
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a missing path means all defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Self::from_value(Value::Object(Default::default()));
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(v).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Short names accepted by `sweep --grid` for the usual sensitivity axes.
pub fn alias(key: &str) -> &str {
    match key {
        "gamma" => "pretrain.loss.gamma",
        "beta" => "pretrain.loss.beta",
        "tau" => "pretrain.loss.tau",
        "alpha" => "pretrain.loss.alpha",
        "epochs" => "pretrain.epochs",
        "final_dim" => "encoder.final_embed_dim",
        "intermediate_dim" => "encoder.intermediate_embed_dim",
        "label_fraction" => "label_fraction",
        other => other,
    }
}

/// Sets a dotted path inside a JSON document. Intermediate objects must
/// exist (they always do in a serialized `RunConfig`).
pub fn set_path(doc: &mut Value, dotted: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| CliError::Config(format!("`{dotted}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*p) {
                return Err(CliError::Config(format!("unknown config key `{dotted}`")));
            }
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*p).ok_or_else(|| CliError::Config(format!("unknown config key `{dotted}`")))?;
    }
    unreachable!("split yields at least one part")
}

/// Parses `key=v1,v2,...` into a config path and JSON values.
pub fn parse_grid(spec: &str) -> Result<(String, Vec<Value>), CliError> {
    let (key, values) = spec.split_once('=').ok_or_else(|| CliError::Config(format!("grid `{spec}` is not key=v1,v2,...")))?;
    let vals = values
        .split(',')
        .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string())))
        .collect::<Vec<_>>();
    if vals.is_empty() || key.is_empty() {
        return Err(CliError::Config(format!("grid `{spec}` has no values")));
    }
    Ok((alias(key.trim()).to_string(), vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_value(c.to_value()).unwrap(), c);
    }

    #[test]
    fn partial_sections_keep_run_defaults() {
        let c = RunConfig::from_value(serde_json::json!({ "finetune": { "epochs": 3 } })).unwrap();
        assert_eq!(c.finetune.epochs, 3);
        assert_eq!(c.finetune.base_lr, DESK_FINETUNE_LR);
        assert_eq!(c.baseline, RunConfig::default().baseline);
    }

    #[test]
    fn unknown_field_reports_path() {
        let v = serde_json::json!({ "pretrain": { "loss": { "gama": 0.3 } } });
        let CliError::Config(m) = RunConfig::from_value(v).unwrap_err() else { panic!() };
        assert!(m.contains("pretrain.loss"), "{m}");
    }

    #[test]
    fn grid_aliases_and_paths() {
        let (k, v) = parse_grid("gamma=0.1,0.25").unwrap();
        assert_eq!(k, "pretrain.loss.gamma");
        assert_eq!(v.len(), 2);
        let mut doc = RunConfig::default().to_value();
        set_path(&mut doc, &k, v[1].clone()).unwrap();
        assert_eq!(RunConfig::from_value(doc.clone()).unwrap().pretrain.loss.gamma, 0.25);
        assert!(set_path(&mut doc, "pretrain.nope", Value::Null).is_err());
    }
}
