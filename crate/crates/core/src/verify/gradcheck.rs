use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckResult {
    /// Max over coordinates of `|a - g| / max(|a|, |g|, 1e-8)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, row, col)` of the worst relative error.
    pub worst: (usize, usize, usize),
    pub coordinates: usize,
}

pub const REL_FLOOR: f64 = 1e-8;

/// Compares `analytic` against central differences of `f` at `inputs`.
///
/// `f` is evaluated at `inputs` with one coordinate shifted by `+eps` and
/// `-eps`; `analytic[k]` must have the shape of `inputs[k]`.
pub fn gradcheck<F>(inputs: &[Array2<f64>], analytic: &[Array2<f64>], eps: f64, f: F) -> Result<GradcheckResult>
where
    F: Fn(&[Array2<f64>]) -> Result<f64>,
{
    if inputs.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    for (k, (x, g)) in inputs.iter().zip(analytic).enumerate() {
        if x.dim() != g.dim() {
            return Err(Error::invalid(format!(
                "gradient {k} has shape {:?}, input has {:?}",
                g.dim(),
                x.dim()
            )));
        }
        if x.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("input or gradient {k} is not finite")));
        }
    }

    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    let mut result = GradcheckResult {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0, 0),
        coordinates: 0,
    };
    for k in 0..inputs.len() {
        let (rows, cols) = inputs[k].dim();
        for r in 0..rows {
            for c in 0..cols {
                let x0 = inputs[k][[r, c]];
                work[k][[r, c]] = x0 + eps;
                let plus = f(&work)?;
                work[k][[r, c]] = x0 - eps;
                let minus = f(&work)?;
                work[k][[r, c]] = x0;
                if !(plus.is_finite() && minus.is_finite()) {
                    return Err(Error::invalid(format!(
                        "loss is not finite around input {k} coordinate ({r}, {c})"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[k][[r, c]];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
                result.max_abs_error = result.max_abs_error.max(abs);
                if rel > result.max_rel_error {
                    result.max_rel_error = rel;
                    result.worst = (k, r, c);
                }
                result.coordinates += 1;
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn squared_norm_is_exact() {
        let x = array![[0.3, -1.2, 2.0], [0.7, 0.1, -0.4]];
        let g = &x * 2.0;
        let r = gradcheck(&[x], &[g], 1e-5, |v| Ok(v[0].iter().map(|a| a * a).sum())).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
        assert_eq!(r.coordinates, 6);
    }

    #[test]
    fn catches_wrong_gradient() {
        let x = array![[1.0, 2.0]];
        let wrong = array![[2.0, 3.0]];
        let r = gradcheck(&[x], &[wrong], 1e-5, |v| Ok(v[0].iter().map(|a| a * a).sum())).unwrap();
        assert!(r.max_rel_error > 0.2);
        assert_eq!(r.worst, (0, 0, 1));
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = array![[f64::NAN]];
        let g = array![[0.0]];
        assert!(gradcheck(&[x], &[g], 1e-5, |_| Ok(0.0)).is_err());
    }
}
