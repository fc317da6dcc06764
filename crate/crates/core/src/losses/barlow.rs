//! Cross-correlation redundancy reduction between two augmentation branches.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// `d x d` cross-correlation of two `N x d` feature matrices along the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrMatrix {
    pub c: Array2<f64>,
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct BarlowGrad {
    pub value: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

/// Column-normalized copy of `w` (optionally mean-centered first) and the
/// column norms.
fn normalize_columns(w: ArrayView2<f64>, center: bool, branch: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut x = w.to_owned();
    if center {
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        x -= &mean;
    }
    let norms = x.map_axis(Axis(0), |col| col.dot(&col).sqrt());
    if let Some(col) = norms.iter().position(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::invalid(format!(
            "branch {branch} column {col} has zero or non-finite norm"
        )));
    }
    x /= &norms;
    Ok((x, norms))
}

fn check_shapes(wa: ArrayView2<f64>, wb: ArrayView2<f64>) -> Result<()> {
    if wa.dim() != wb.dim() {
        return Err(Error::invalid(format!(
            "branch shapes differ: {:?} vs {:?}",
            wa.dim(),
            wb.dim()
        )));
    }
    if wa.nrows() == 0 || wa.ncols() == 0 {
        return Err(Error::invalid("empty feature matrix"));
    }
    Ok(())
}

pub fn cross_correlation(wa: ArrayView2<f64>, wb: ArrayView2<f64>) -> Result<CrossCorrMatrix> {
    cross_correlation_with(wa, wb, false)
}

/// Cross-correlation with optional per-column mean-centering.
pub fn cross_correlation_with(wa: ArrayView2<f64>, wb: ArrayView2<f64>, center: bool) -> Result<CrossCorrMatrix> {
    check_shapes(wa, wb)?;
    let (a, _) = normalize_columns(wa, center, "A")?;
    let (b, _) = normalize_columns(wb, center, "B")?;
    Ok(CrossCorrMatrix {
        c: a.t().dot(&b),
        batch_size: wa.nrows(),
    })
}

fn loss_of(c: &Array2<f64>, alpha: f64) -> f64 {
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    for ((i, j), &v) in c.indexed_iter() {
        if i == j {
            invariance += (1.0 - v) * (1.0 - v);
        } else {
            redundancy += v * v;
        }
    }
    invariance + alpha * redundancy
}

/// `sum_i (1 - C_ii)^2 + alpha * sum_{i != j} C_ij^2`.
pub fn barlow_twins_loss(wa: ArrayView2<f64>, wb: ArrayView2<f64>, alpha: f64) -> Result<f64> {
    Ok(loss_of(&cross_correlation(wa, wb)?.c, alpha))
}

pub fn barlow_twins_grad(wa: ArrayView2<f64>, wb: ArrayView2<f64>, alpha: f64, center: bool) -> Result<BarlowGrad> {
    check_shapes(wa, wb)?;
    let (a, norm_a) = normalize_columns(wa, center, "A")?;
    let (b, norm_b) = normalize_columns(wb, center, "B")?;
    let c = a.t().dot(&b);
    let value = loss_of(&c, alpha);

    let mut g = c.mapv(|v| 2.0 * alpha * v);
    for i in 0..g.nrows() {
        g[[i, i]] = -2.0 * (1.0 - c[[i, i]]);
    }
    let grad_a_unit = b.dot(&g.t());
    let grad_b_unit = a.dot(&g);
    Ok(BarlowGrad {
        value,
        grad_a: unnormalize(grad_a_unit, &a, &norm_a, center),
        grad_b: unnormalize(grad_b_unit, &b, &norm_b, center),
    })
}

/// Backpropagates through the column normalization (and centering).
fn unnormalize(mut grad: Array2<f64>, unit: &Array2<f64>, norms: &Array1<f64>, center: bool) -> Array2<f64> {
    Zip::from(grad.columns_mut())
        .and(unit.columns())
        .and(norms)
        .for_each(|mut g, u, &n| {
            let radial = g.dot(&u);
            g.scaled_add(-radial, &u);
            g.mapv_inplace(|v| v / n);
        });
    if center {
        let mean = grad.mean_axis(Axis(0)).expect("non-empty batch");
        grad -= &mean;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn orthogonal() -> Array2<f64> {
        array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]]
    }

    #[test]
    fn orthogonal_columns_give_identity() {
        let w = orthogonal();
        let c = cross_correlation(w.view(), w.view()).unwrap();
        assert_eq!(c.c, Array2::<f64>::eye(3));
        assert_eq!(c.batch_size, 4);
        assert_eq!(barlow_twins_loss(w.view(), w.view(), 0.005).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_feature() {
        let w = array![[1.0, 1.0], [2.0, 2.0], [-0.5, -0.5]];
        let c = cross_correlation(w.view(), w.view()).unwrap();
        assert_relative_eq!(c.c[[0, 1]], 1.0, max_relative = 1e-15);
        assert_relative_eq!(c.c[[1, 0]], 1.0, max_relative = 1e-15);
        let loss = barlow_twins_loss(w.view(), w.view(), 0.005).unwrap();
        assert_relative_eq!(loss, 0.01, max_relative = 1e-12);
    }

    #[test]
    fn zero_column_is_named() {
        let wa = array![[1.0, 0.0], [2.0, 0.0]];
        let wb = array![[1.0, 1.0], [2.0, 3.0]];
        let err = cross_correlation(wa.view(), wb.view()).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
    }

    #[test]
    fn shape_mismatch() {
        let wa = Array2::<f64>::ones((3, 2));
        let wb = Array2::<f64>::ones((2, 2));
        assert!(barlow_twins_loss(wa.view(), wb.view(), 0.1).is_err());
    }

    #[test]
    fn entries_are_bounded() {
        let wa = array![[1.0, -2.0, 0.3], [0.1, 0.4, -1.0], [2.0, 1.0, 1.0]];
        let wb = array![[0.5, 2.0, 0.0], [1.0, -0.4, 1.0], [-2.0, 1.0, 3.0]];
        for center in [false, true] {
            let c = cross_correlation_with(wa.view(), wb.view(), center).unwrap();
            assert!(c.c.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn gradient_vanishes_at_identity() {
        let w = orthogonal();
        let g = barlow_twins_grad(w.view(), w.view(), 0.3, false).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.grad_a.iter().chain(g.grad_b.iter()).all(|v| v.abs() < 1e-15));
    }
}
