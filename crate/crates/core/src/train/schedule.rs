use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear ramp from 0 to `base_lr` over `warmup` epochs, then half-cosine
/// decay over the remaining epochs.
pub fn cosine_warmup_lr(epoch: usize, epochs: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{epochs}")));
    }
    if warmup >= epochs {
        return Err(Error::invalid(format!("warmup {warmup} must be below epochs {epochs}")));
    }
    if epoch < warmup {
        return Ok(base_lr * epoch as f64 / warmup as f64);
    }
    let t = (epoch - warmup) as f64 / (epochs - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Absolute improvement required to reset patience (metric: higher is
    /// better).
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            min_delta: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::invalid(format!("plateau factor must lie in (0, 1), got {}", self.factor)));
        }
        if self.patience < 1 {
            return Err(Error::invalid("plateau patience must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::invalid("plateau min_delta must be non-negative"));
        }
        Ok(())
    }
}

/// Stateful plateau decay. The rate is multiplied by `factor` once more than
/// `patience` consecutive epochs pass without improving on the best metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(base_lr: f64, config: PlateauConfig) -> Self {
        Self {
            config,
            lr: base_lr,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's metric and returns the rate for the next epoch.
    /// Returns whether the metric was a new best alongside.
    pub fn observe(&mut self, metric: f64) -> (f64, bool) {
        let improved = match self.best {
            None => true,
            Some(b) => metric > b + self.config.min_delta,
        };
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.config.patience {
                self.lr *= self.config.factor;
                self.bad_epochs = 0;
            }
        }
        (self.lr, improved)
    }
}

/// The rate after replaying a whole metric history.
pub fn plateau_lr(history: &[f64], base_lr: f64, config: PlateauConfig) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::invalid("plateau history is empty"));
    }
    let mut p = Plateau::new(base_lr, config);
    for &m in history {
        p.observe(m);
    }
    Ok(p.lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_closed_form() {
        let (e, w, b) = (100, 10, 1e-3);
        assert_eq!(cosine_warmup_lr(0, e, w, b).unwrap(), 0.0);
        assert_eq!(cosine_warmup_lr(5, e, w, b).unwrap(), b / 2.0);
        assert_eq!(cosine_warmup_lr(10, e, w, b).unwrap(), b);
        let last = cosine_warmup_lr(99, e, w, b).unwrap();
        let expect = b * 0.5 * (1.0 + (std::f64::consts::PI * 89.0 / 90.0).cos());
        assert_eq!(last, expect);
        assert!(last < b * 1e-3);
        assert!(cosine_warmup_lr(100, e, w, b).is_err());
        assert!(cosine_warmup_lr(0, 10, 10, b).is_err());
    }

    #[test]
    fn plateau_examples() {
        let c = PlateauConfig::default();
        let rising: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        assert_eq!(plateau_lr(&rising, 1e-4, c).unwrap(), 1e-4);
        assert_eq!(plateau_lr(&[0.5; 5], 1e-4, c).unwrap(), 5e-5);
        assert_eq!(plateau_lr(&[0.5; 4], 1e-4, c).unwrap(), 1e-4);
        assert_eq!(plateau_lr(&[0.5; 9], 1e-4, c).unwrap(), 2.5e-5);
        // Gains below min_delta count as stagnation.
        let creeping: Vec<f64> = (0..5).map(|i| 0.5 + i as f64 * 1e-5).collect();
        assert_eq!(plateau_lr(&creeping, 1e-4, c).unwrap(), 5e-5);
        assert!(plateau_lr(&[], 1e-4, c).is_err());
    }
}
