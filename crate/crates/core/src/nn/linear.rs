use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Ix2};

use super::{join, Param, Parameters};

/// Affine map on `(in, N)` feature matrices.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, seed: u64, name: &str) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        Self {
            weight: Param::uniform(&[outputs, inputs], bound, seed, &join(name, "weight")),
            bias: Param::uniform(&[outputs], bound, seed, &join(name, "bias")),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn w(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        assert_eq!(x.nrows(), self.inputs(), "linear input width mismatch");
        let mut y = Array2::<f32>::zeros((self.outputs(), x.ncols()));
        general_mat_mul(1.0, &self.w(), x, 0.0, &mut y);
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.value.iter()) {
            row += b;
        }
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.take().expect("linear backward without forward");
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D grad");
            general_mat_mul(1.0, grad, &x.t(), 1.0, &mut gw);
        }
        for (gb, s) in self.bias.grad.iter_mut().zip(grad.sum_axis(Axis(1)).iter()) {
            *gb += s;
        }
        let mut dx = Array2::<f32>::zeros(x.dim());
        general_mat_mul(1.0, &self.w().t(), grad, 0.0, &mut dx);
        dx
    }
}

impl Parameters for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{probe, random};

    #[test]
    fn gradients_match_finite_differences() {
        let mut lin = Linear::new(5, 3, 1, "l");
        let x = random(&[5, 4], 2).into_dimensionality::<Ix2>().unwrap();
        let w = random(&[3, 4], 3).into_dimensionality::<Ix2>().unwrap();
        lin.forward(&x);
        let dx = lin.backward(&w);
        let f = |l: &mut Linear, x: &Array2<f32>| -> f64 {
            l.forward(x).iter().zip(w.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut l2 = lin.clone();
        let err = probe(&x.clone().into_dyn(), &dx.into_dyn(), |xp| {
            f(&mut l2, &xp.clone().into_dimensionality::<Ix2>().unwrap())
        });
        assert!(err < 1e-2);
        let err_b = probe(&lin.bias.value.clone(), &lin.bias.grad.clone(), |bp| {
            let mut l = lin.clone();
            l.bias.value = bp.clone();
            f(&mut l, &x)
        });
        assert!(err_b < 1e-2);
    }
}
