use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ArrayD<f32>,
    pub v: ArrayD<f32>,
}

/// Adaptive moment estimation with decoupled weight decay. State is keyed by
/// parameter name so it survives a checkpoint round trip independently of
/// module traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub state: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, params: Vec<(String, &mut Param)>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        for (name, p) in params {
            if !p.trainable {
                continue;
            }
            let st = self.state.entry(name).or_insert_with(|| AdamState {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
            });
            let value = p.value.as_slice_mut().expect("contiguous parameter");
            let grad = p.grad.as_slice().expect("contiguous gradient");
            let m = st.m.as_slice_mut().expect("contiguous state");
            let v = st.v.as_slice_mut().expect("contiguous state");
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                value[i] = value[i] * decay - step_size * m[i] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        let mut p = Param::new(arr1(&[1.0f32, -1.0, 0.5]).into_dyn());
        p.grad = arr1(&[2.0f32, -3.0, 0.0]).into_dyn();
        let mut opt = Adam::new(AdamConfig::default());
        opt.update(vec![("p".into(), &mut p)], 0.1);
        let v = p.value.as_slice().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
        assert_eq!(v[2], 0.5);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[2]), 2.0f32));
        let mut opt = Adam::new(AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        });
        opt.update(vec![("p".into(), &mut p)], 0.1);
        assert!((p.value[0] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn buffers_are_untouched() {
        let mut b = Param::buffer(ArrayD::from_elem(IxDyn(&[2]), 3.0f32));
        let mut opt = Adam::new(AdamConfig::default());
        opt.update(vec![("b".into(), &mut b)], 0.1);
        assert_eq!(b.value[0], 3.0);
        assert!(opt.state.is_empty());
    }
}
