use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, Axis, Ix2};

use super::{join, Param, Parameters};

/// Output side length of a convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Square 2-D convolution over `(C, N, H, W)` maps via im2col + GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels * kernel * kernel)`.
    pub weight: Param,
    pub bias: Option<Param>,
    /// When false, backward skips the input gradient (first layer).
    pub input_grad: bool,
    cache: Option<(Array2<f32>, [usize; 4])>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
        seed: u64,
        name: &str,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f32).sqrt();
        let weight = Param::uniform(&[out_channels, fan_in], bound, seed, &join(name, "weight"));
        let bias = with_bias.then(|| Param::zeros(&[out_channels]));
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias,
            input_grad: true,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_output_size(h, self.kernel, self.stride, self.padding),
            conv_output_size(w, self.kernel, self.stride, self.padding),
        )
    }

    fn weight2(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D conv weight")
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (c, n, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv expects {} input channels, got {c}", self.in_channels);
        let (ho, wo) = self.output_hw(h, w);
        let cols = self.im2col(x, ho, wo);
        let mut out = Array2::<f32>::zeros((self.out_channels, n * ho * wo));
        general_mat_mul(1.0, &self.weight2(), &cols, 0.0, &mut out);
        if let Some(b) = &self.bias {
            for (mut row, &bv) in out.rows_mut().into_iter().zip(b.value.iter()) {
                row += bv;
            }
        }
        self.cache = Some((cols, [c, n, h, w]));
        out.into_shape_with_order((self.out_channels, n, ho, wo)).expect("contiguous output")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Option<Array4<f32>> {
        let (cols, [c, n, h, w]) = self.cache.take().expect("conv backward without forward");
        let (co, gn, ho, wo) = grad.dim();
        debug_assert_eq!((co, gn), (self.out_channels, n));
        let g2 = grad
            .view()
            .into_shape_with_order((co, gn * ho * wo))
            .expect("contiguous gradient");
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D grad");
            general_mat_mul(1.0, &g2, &cols.t(), 1.0, &mut gw);
        }
        if let Some(b) = &mut self.bias {
            let sums = g2.sum_axis(Axis(1));
            for (gb, s) in b.grad.iter_mut().zip(sums.iter()) {
                *gb += s;
            }
        }
        if !self.input_grad {
            return None;
        }
        let mut dcols = Array2::<f32>::zeros(cols.dim());
        general_mat_mul(1.0, &self.weight2().t(), &g2, 0.0, &mut dcols);
        Some(self.col2im(&dcols, [c, n, h, w], ho, wo))
    }

    fn im2col(&self, x: &Array4<f32>, ho: usize, wo: usize) -> Array2<f32> {
        let (c, n, h, w) = x.dim();
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let m = n * ho * wo;
        let xs = x.as_slice().expect("standard layout input");
        let mut cols = vec![0.0f32; c * k * k * m];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * m..(row + 1) * m];
                    for ni in 0..n {
                        let plane = &xs[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let d = &mut dst[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                            for (ox, dv) in d.iter_mut().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    *dv = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((c * k * k, m), cols).expect("im2col shape")
    }

    fn col2im(&self, dcols: &Array2<f32>, [c, n, h, w]: [usize; 4], ho: usize, wo: usize) -> Array4<f32> {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let m = n * ho * wo;
        let cs = dcols.as_slice().expect("standard layout");
        let mut dx = vec![0.0f32; c * n * h * w];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cs[row * m..(row + 1) * m];
                    for ni in 0..n {
                        let plane = &mut dx[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            let g = &src[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                            for (ox, &gv) in g.iter().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Array4::from_shape_vec((c, n, h, w), dx).expect("col2im shape")
    }
}

impl Parameters for Conv2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{probe, random};
    use ndarray::{Array4, Ix4};

    /// Direct nested-loop convolution for cross-checking im2col.
    fn reference(conv: &Conv2d, x: &Array4<f32>) -> Array4<f32> {
        let (c, n, h, w) = x.dim();
        let (ho, wo) = conv.output_hw(h, w);
        let k = conv.kernel;
        let wt = conv.weight.value.view().into_shape_with_order((conv.out_channels, c, k, k)).unwrap();
        let mut out = Array4::zeros((conv.out_channels, n, ho, wo));
        for o in 0..conv.out_channels {
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |bb| bb.value[o]);
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wt[[o, ci, ky, kx]] * x[[ci, b, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        out[[o, b, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_output_size(32, 3, 2, 1), 16);
        assert_eq!(conv_output_size(2, 3, 2, 1), 1);
        assert_eq!(conv_output_size(1, 3, 2, 1), 1);
        assert_eq!(conv_output_size(224, 7, 2, 3), 112);
        assert_eq!(conv_output_size(14, 1, 2, 0), 7);
    }

    #[test]
    fn matches_direct_convolution() {
        for (k, s) in [(3, 1), (3, 2), (1, 2), (7, 2)] {
            let mut conv = Conv2d::new(3, 4, k, s, true, 5, "c");
            conv.bias.as_mut().unwrap().value = random(&[4], 8);
            let x = random(&[3, 2, 9, 9], 1).into_dimensionality::<Ix4>().unwrap();
            let fast = conv.forward(&x);
            let slow = reference(&conv, &x);
            let diff = (&fast - &slow).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
            assert!(diff < 1e-5, "k={k} s={s} diff={diff}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut conv = Conv2d::new(2, 3, 3, 2, true, 11, "c");
        let x = random(&[2, 2, 6, 6], 2).into_dimensionality::<Ix4>().unwrap();
        let y = conv.forward(&x);
        let weights = random(y.shape(), 3).into_dimensionality::<Ix4>().unwrap();
        let dx = conv.backward(&weights).unwrap();

        let f = |conv: &mut Conv2d, x: &Array4<f32>| -> f64 {
            let y = conv.forward(x);
            y.iter().zip(weights.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut probe_conv = conv.clone();
        let err_x = probe(&x.clone().into_dyn(), &dx.into_dyn(), |xp| {
            f(&mut probe_conv, &xp.clone().into_dimensionality::<Ix4>().unwrap())
        });
        assert!(err_x < 1e-2, "input gradient error {err_x}");

        let gw = conv.weight.grad.clone();
        let w0 = conv.weight.value.clone();
        let err_w = probe(&w0, &gw, |wp| {
            let mut c = conv.clone();
            c.weight.value = wp.clone();
            f(&mut c, &x)
        });
        assert!(err_w < 1e-2, "weight gradient error {err_w}");
    }
}
