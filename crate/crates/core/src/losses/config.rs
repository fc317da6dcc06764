use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with an anchor that has no positive in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// Reject the batch with an invalid-input error.
    Strict,
    /// Drop the anchor and rescale the sum by `rows / surviving_anchors`.
    Skip,
}

/// Where the redundancy-reduction term is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BtPlacement {
    /// On the two intermediate projections (the full objective).
    Intermediate,
    /// On the final projections `z1, z2`. Only used by the ablation harness.
    Final,
    Off,
}

/// Which terms of the composite objective contribute to the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub sup: bool,
    pub view: bool,
    pub bt: BtPlacement,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            sup: true,
            view: true,
            bt: BtPlacement::Intermediate,
        }
    }
}

impl LossTerms {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.sup {
            parts.push("sup".to_string());
        }
        if self.view {
            parts.push("view".to_string());
        }
        match self.bt {
            BtPlacement::Intermediate => parts.push("bt_inter".to_string()),
            BtPlacement::Final => parts.push("bt_final".to_string()),
            BtPlacement::Off => {}
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Hyperparameters of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Softmax temperature shared by all three contrastive terms.
    pub tau: f64,
    /// Off-diagonal weight of the redundancy-reduction term.
    pub alpha: f64,
    /// Weight of the view-invariant contrastive term.
    pub gamma: f64,
    /// Weight of the two redundancy-reduction terms.
    pub beta: f64,
    /// L2-normalize embedding rows before the dot products.
    pub normalize_embeddings: bool,
    /// Subtract the row max before exponentiating.
    pub logit_stabilization: bool,
    /// Mean-center each feature column before the cross-correlation.
    pub bt_mean_center: bool,
    pub anchor_policy: AnchorPolicy,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.005,
            gamma: 0.5,
            beta: 0.9,
            normalize_embeddings: true,
            logit_stabilization: true,
            bt_mean_center: false,
            anchor_policy: AnchorPolicy::Strict,
            terms: LossTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Effective weights `(sup, view, bt)` after applying the term switches.
    pub fn weights(&self) -> (f64, f64, f64) {
        let sup = if self.terms.sup { 1.0 } else { 0.0 };
        let view = if self.terms.view { self.gamma } else { 0.0 };
        let bt = if self.terms.bt == BtPlacement::Off {
            0.0
        } else {
            self.beta
        };
        (sup, view, bt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = LossConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.beta, 0.9);
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            LossConfig { tau: 0.0, ..Default::default() },
            LossConfig { tau: f64::NAN, ..Default::default() },
            LossConfig { alpha: 1.5, ..Default::default() },
            LossConfig { gamma: -0.1, ..Default::default() },
            LossConfig { beta: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn term_labels() {
        assert_eq!(LossTerms::default().label(), "sup+view+bt_inter");
        let t = LossTerms { sup: false, view: true, bt: BtPlacement::Final };
        assert_eq!(t.label(), "view+bt_final");
    }
}
