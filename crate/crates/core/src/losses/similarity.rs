use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Scaled dot-product similarities between all rows of an embedding matrix,
/// together with what is needed to push gradients back to the raw rows.
#[derive(Debug, Clone)]
pub struct Similarity {
    /// `2N x 2N` logits; the diagonal holds `-inf` so it never enters a
    /// softmax denominator.
    pub logits: Array2<f64>,
    /// Rows actually used in the dot products (unit rows when normalizing).
    unit: Array2<f64>,
    norms: Option<Array1<f64>>,
    tau: f64,
}

impl Similarity {
    pub fn compute(z: ArrayView2<f64>, tau: f64, normalize: bool) -> Result<Self> {
        if z.nrows() < 2 {
            return Err(Error::invalid(format!(
                "similarity needs at least 2 rows, got {}",
                z.nrows()
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        let (unit, norms) = if normalize {
            let norms = z.map_axis(Axis(1), |row| row.dot(&row).sqrt());
            if let Some(row) = norms.iter().position(|&n| !(n > 0.0 && n.is_finite())) {
                return Err(Error::invalid(format!(
                    "embedding row {row} has zero or non-finite norm"
                )));
            }
            let unit = &z / &norms.view().insert_axis(Axis(1));
            (unit, Some(norms))
        } else {
            (z.to_owned(), None)
        };
        let mut logits = unit.dot(&unit.t()) / tau;
        logits.diag_mut().fill(f64::NEG_INFINITY);
        Ok(Self {
            logits,
            unit,
            norms,
            tau,
        })
    }

    /// Maps a gradient with respect to the logits (diagonal ignored) back to
    /// the raw embedding rows.
    pub fn backward(&self, grad_logits: &Array2<f64>) -> Array2<f64> {
        let mut sym = grad_logits + &grad_logits.t();
        sym.diag_mut().fill(0.0);
        let grad_unit = sym.dot(&self.unit) / self.tau;
        match &self.norms {
            None => grad_unit,
            Some(norms) => {
                let mut out = grad_unit;
                Zip::from(out.rows_mut())
                    .and(self.unit.rows())
                    .and(norms)
                    .for_each(|mut g, u, &n| {
                        let radial = g.dot(&u);
                        g.scaled_add(-radial, &u);
                        g.mapv_inplace(|v| v / n);
                    });
                out
            }
        }
    }
}

/// Pairwise logits `(z_i . z_k) / tau`, with rows L2-normalized first when
/// `normalize` is set. The diagonal is `-inf`.
pub fn similarity_logits(z: ArrayView2<f64>, tau: f64, normalize: bool) -> Result<Array2<f64>> {
    Ok(Similarity::compute(z, tau, normalize)?.logits)
}
