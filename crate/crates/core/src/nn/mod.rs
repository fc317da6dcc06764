//! A small channel-major convolutional engine with hand-written backward
//! passes.
//!
//! Feature maps are `(C, N, H, W)` and feature vectors are `(F, N)`, so the
//! output of every im2col GEMM is already in the next layer's layout and
//! normalization statistics run over contiguous rows.

mod act;
mod conv;
mod linear;
mod norm;
mod optim;

pub use act::{global_avg_pool, global_avg_pool_backward, Relu};
pub use conv::{conv_output_size, Conv2d};
pub use linear::Linear;
pub use norm::BatchNorm;
pub use optim::{Adam, AdamConfig, AdamState};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::rng::{self, Purpose};

/// A tensor of trainable weights (or a non-trainable buffer such as running
/// statistics) and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: ArrayD<f32>) -> Self {
        Self {
            value,
            grad: ArrayD::zeros(IxDyn(&[0])),
            trainable: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    /// Uniform in `[-bound, bound]`, drawn from a stream keyed by `seed` and
    /// `key` so that initialization does not depend on construction order.
    pub fn uniform(shape: &[usize], bound: f32, seed: u64, key: &str) -> Self {
        let mut rng = rng::stream(seed, Purpose::Init, 0, fnv1a(key));
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..=bound));
        Self::new(value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Named access to every parameter and buffer of a module tree.
pub trait Parameters {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            if p.trainable {
                p.zero_grad();
            }
        }
    }

    fn trainable_count(&self) -> usize {
        self.named_params().iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Finite-difference helpers for layer tests. Layers compute in `f32`,
    //! so the probes use a large step and a loose tolerance.

    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    use crate::rng::{self, Purpose};

    pub fn random(shape: &[usize], seed: u64) -> ArrayD<f32> {
        let mut r = rng::stream(seed, Purpose::Eval, 99, 0);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || r.random_range(-1.0f32..1.0))
    }

    /// Max relative error between `analytic` and central differences of the
    /// scalar `f` with respect to `x`, over a subset of coordinates.
    pub fn probe<F: FnMut(&ArrayD<f32>) -> f64>(x: &ArrayD<f32>, analytic: &ArrayD<f32>, mut f: F) -> f64 {
        let eps = 1e-2f32;
        let mut worst = 0.0f64;
        let stride = (x.len() / 40).max(1);
        let mut xp = x.clone();
        for idx in (0..x.len()).step_by(stride) {
            let orig = x.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let plus = f(&xp);
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let minus = f(&xp);
            xp.as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps as f64);
            let a = analytic.as_slice().unwrap()[idx] as f64;
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(err);
        }
        worst
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, m) in self.iter().enumerate() {
            m.params(&join(prefix, &i.to_string()), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.params_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        if let Some(m) = self {
            m.params(prefix, out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        if let Some(m) = self {
            m.params_mut(prefix, out);
        }
    }
}

/// Implements [`Parameters`] for a struct by delegating to named fields.
macro_rules! parameters {
    ($ty:ty { $($field:ident => $name:literal),* $(,)? }) => {
        impl $crate::nn::Parameters for $ty {
            fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a $crate::nn::Param)>) {
                $( $crate::nn::Parameters::params(&self.$field, &$crate::nn::join(prefix, $name), out); )*
            }
            fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut $crate::nn::Param)>) {
                $( $crate::nn::Parameters::params_mut(&mut self.$field, &$crate::nn::join(prefix, $name), out); )*
            }
        }
    };
}
pub(crate) use parameters;
