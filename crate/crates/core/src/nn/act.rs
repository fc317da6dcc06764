use ndarray::{Array, Array2, Array4, Dimension, Zip};

/// Rectifier that remembers which units were active.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<D: Dimension>(&mut self, mut x: Array<f32, D>) -> Array<f32, D> {
        let mut mask = Vec::with_capacity(x.len());
        x.map_inplace(|v| {
            let on = *v > 0.0;
            mask.push(on);
            if !on {
                *v = 0.0;
            }
        });
        self.mask = Some(mask);
        x
    }

    pub fn backward<D: Dimension>(&mut self, mut grad: Array<f32, D>) -> Array<f32, D> {
        let mask = self.mask.take().expect("relu backward without forward");
        for (g, on) in grad.iter_mut().zip(mask) {
            if !on {
                *g = 0.0;
            }
        }
        grad
    }
}

/// Mean over the spatial axes: `(C, N, H, W)` to `(C, N)`.
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (c, n, h, w) = x.dim();
    let flat = x.view().into_shape_with_order((c, n, h * w)).expect("contiguous");
    let scale = 1.0 / (h * w) as f32;
    let mut out = Array2::<f32>::zeros((c, n));
    Zip::from(&mut out).and(flat.lanes(ndarray::Axis(2))).for_each(|o, lane| *o = lane.sum() * scale);
    out
}

pub fn global_avg_pool_backward(grad: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (c, n) = grad.dim();
    let scale = 1.0 / (h * w) as f32;
    let mut out = Array4::<f32>::zeros((c, n, h, w));
    for ((ci, ni), &g) in grad.indexed_iter() {
        out.slice_mut(ndarray::s![ci, ni, .., ..]).fill(g * scale);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn relu_masks_gradient() {
        let mut r = Relu::default();
        let y = r.forward(arr2(&[[1.0f32, -2.0], [0.0, 3.0]]));
        assert_eq!(y, arr2(&[[1.0, 0.0], [0.0, 3.0]]));
        let g = r.backward(arr2(&[[5.0f32, 5.0], [5.0, 5.0]]));
        assert_eq!(g, arr2(&[[5.0, 0.0], [0.0, 5.0]]));
    }

    #[test]
    fn pool_and_its_adjoint() {
        let x = Array4::from_shape_fn((2, 3, 2, 2), |(c, n, i, j)| (c * 100 + n * 10 + i * 2 + j) as f32);
        let p = global_avg_pool(&x);
        assert_eq!(p[[1, 2]], 121.5);
        let g = arr2(&[[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let back = global_avg_pool_backward(&g, 2, 2);
        // <pool(x), g> == <x, pool^T(g)>
        let lhs: f32 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }
}
