use ndarray::{Array1, Array2, Array4, ArrayView2, Ix1};

use super::{join, Param, Parameters};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalization over the rows of a channel-major tensor. A feature map
/// `(C, N, H, W)` is normalized per channel across `N * H * W`; a feature
/// matrix `(F, N)` per feature across `N`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Array2<f32>, Array1<f32>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            running_var: Param::buffer(ndarray::ArrayD::ones(ndarray::IxDyn(&[channels]))),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward4(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let shape = x.dim();
        let flat = x.view().into_shape_with_order((shape.0, shape.1 * shape.2 * shape.3)).expect("contiguous");
        self.forward_rows(flat, train).into_shape_with_order(shape).expect("contiguous")
    }

    pub fn backward4(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let shape = grad.dim();
        let flat = grad.view().into_shape_with_order((shape.0, shape.1 * shape.2 * shape.3)).expect("contiguous");
        self.backward_rows(flat).into_shape_with_order(shape).expect("contiguous")
    }

    pub fn forward2(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        self.forward_rows(x.view(), train)
    }

    pub fn backward2(&mut self, grad: &Array2<f32>) -> Array2<f32> {
        self.backward_rows(grad.view())
    }

    fn vec(p: &Param) -> ndarray::ArrayView1<'_, f32> {
        p.value.view().into_dimensionality::<Ix1>().expect("1-D")
    }

    fn forward_rows(&mut self, x: ArrayView2<f32>, train: bool) -> Array2<f32> {
        let (c, m) = x.dim();
        assert_eq!(c, self.channels(), "batch norm channel mismatch");
        let gamma = Self::vec(&self.gamma).to_owned();
        let beta = Self::vec(&self.beta).to_owned();
        let mut out = Array2::<f32>::zeros((c, m));
        if !train {
            let rm = Self::vec(&self.running_mean);
            let rv = Self::vec(&self.running_var);
            for ch in 0..c {
                let scale = gamma[ch] / (rv[ch] + EPS).sqrt();
                let shift = beta[ch] - rm[ch] * scale;
                let src = x.row(ch);
                for (o, &v) in out.row_mut(ch).iter_mut().zip(src.iter()) {
                    *o = v * scale + shift;
                }
            }
            self.cache = None;
            return out;
        }
        let mut xhat = Array2::<f32>::zeros((c, m));
        let mut inv_std = Array1::<f32>::zeros(c);
        for ch in 0..c {
            let row = x.row(ch);
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
            let istd = 1.0 / (var as f32 + EPS).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (gamma[ch], beta[ch]);
            let mut xh = xhat.row_mut(ch);
            let mut o = out.row_mut(ch);
            for j in 0..m {
                let h = (row[j] - mean as f32) * istd;
                xh[j] = h;
                o[j] = g * h + b;
            }
            let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
        }
        self.cache = Some((xhat, inv_std));
        out
    }

    fn backward_rows(&mut self, grad: ArrayView2<f32>) -> Array2<f32> {
        let (xhat, inv_std) = self.cache.take().expect("batch norm backward without a training forward");
        let (c, m) = grad.dim();
        let mut dx = Array2::<f32>::zeros((c, m));
        for ch in 0..c {
            let g = grad.row(ch);
            let xh = xhat.row(ch);
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for j in 0..m {
                sum_g += g[j] as f64;
                sum_gx += (g[j] * xh[j]) as f64;
            }
            self.beta.grad[ch] += sum_g as f32;
            self.gamma.grad[ch] += sum_gx as f32;
            let scale = self.gamma.value[ch] * inv_std[ch];
            let mean_g = (sum_g / m as f64) as f32;
            let mean_gx = (sum_gx / m as f64) as f32;
            let mut d = dx.row_mut(ch);
            for j in 0..m {
                d[j] = scale * (g[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

impl Parameters for BatchNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{probe, random};
    use ndarray::Ix2;

    #[test]
    fn training_output_is_standardized() {
        let mut bn = BatchNorm::new(3);
        let x = random(&[3, 50], 4).into_dimensionality::<Ix2>().unwrap() * 5.0 + 2.0;
        let y = bn.forward2(&x, true);
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value.iter().all(|&v| v > 0.1));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut bn = BatchNorm::new(3);
        bn.gamma.value = random(&[3], 2) + 1.5;
        bn.beta.value = random(&[3], 3);
        let x = random(&[3, 10], 5).into_dimensionality::<Ix2>().unwrap();
        let w = random(&[3, 10], 6).into_dimensionality::<Ix2>().unwrap();
        bn.forward2(&x, true);
        let dx = bn.backward2(&w);
        let f = |bn: &mut BatchNorm, x: &Array2<f32>| -> f64 {
            let y = bn.forward2(x, true);
            y.iter().zip(w.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut b2 = bn.clone();
        let err = probe(&x.clone().into_dyn(), &dx.into_dyn(), |xp| {
            f(&mut b2, &xp.clone().into_dimensionality::<Ix2>().unwrap())
        });
        assert!(err < 2e-2, "input gradient error {err}");
        let err_g = probe(&bn.gamma.value.clone(), &bn.gamma.grad.clone(), |gp| {
            let mut b = bn.clone();
            b.gamma.value = gp.clone();
            f(&mut b, &x)
        });
        assert!(err_g < 1e-2, "gamma gradient error {err_g}");
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean.value = ndarray::arr1(&[1.0f32, -1.0]).into_dyn();
        bn.running_var.value = ndarray::arr1(&[4.0f32, 1.0]).into_dyn();
        let x = ndarray::arr2(&[[3.0f32], [0.0]]);
        let y = bn.forward2(&x, false);
        assert!((y[[0, 0]] - 1.0).abs() < 1e-4);
        assert!((y[[1, 0]] - 1.0).abs() < 1e-4);
    }
}
