use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// The `2N` augmented rows consumed by the contrastive terms.
///
/// Row `i` and row `pair_index[i]` are the two augmentations of one image and
/// therefore share label, instance id and view id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub embeddings: Array2<f64>,
    pub pair_index: Vec<usize>,
    pub labels: Vec<usize>,
    pub instance_ids: Vec<usize>,
    pub view_ids: Vec<usize>,
}

impl ContrastBatch {
    pub fn new(
        embeddings: Array2<f64>,
        pair_index: Vec<usize>,
        labels: Vec<usize>,
        instance_ids: Vec<usize>,
        view_ids: Vec<usize>,
    ) -> Result<Self> {
        let rows = embeddings.nrows();
        for (name, len) in [
            ("pair_index", pair_index.len()),
            ("labels", labels.len()),
            ("instance_ids", instance_ids.len()),
            ("view_ids", view_ids.len()),
        ] {
            if len != rows {
                return Err(Error::invalid(format!(
                    "{name} has {len} entries for {rows} embedding rows"
                )));
            }
        }
        for (i, &k) in pair_index.iter().enumerate() {
            if k >= rows || k == i || pair_index[k] != i {
                return Err(Error::invalid(format!(
                    "pair index is not an involution without fixed points at row {i}"
                )));
            }
            if labels[i] != labels[k] || instance_ids[i] != instance_ids[k] || view_ids[i] != view_ids[k] {
                return Err(Error::invalid(format!(
                    "rows {i} and {k} are augmentation siblings but carry different metadata"
                )));
            }
        }
        Ok(Self {
            embeddings,
            pair_index,
            labels,
            instance_ids,
            view_ids,
        })
    }

    /// Interleaves two row-aligned augmentation branches: row `2b` comes from
    /// `z1[b]` and row `2b + 1` from `z2[b]`.
    pub fn from_branches(
        z1: ArrayView2<f64>,
        z2: ArrayView2<f64>,
        labels: &[usize],
        instance_ids: &[usize],
        view_ids: &[usize],
    ) -> Result<Self> {
        if z1.dim() != z2.dim() {
            return Err(Error::invalid(format!(
                "branch shapes differ: {:?} vs {:?}",
                z1.dim(),
                z2.dim()
            )));
        }
        let n = z1.nrows();
        if labels.len() != n || instance_ids.len() != n || view_ids.len() != n {
            return Err(Error::invalid(format!(
                "metadata lengths ({}, {}, {}) do not match {n} images",
                labels.len(),
                instance_ids.len(),
                view_ids.len()
            )));
        }
        let mut z = Array2::zeros((2 * n, z1.ncols()));
        for b in 0..n {
            z.row_mut(2 * b).assign(&z1.row(b));
            z.row_mut(2 * b + 1).assign(&z2.row(b));
        }
        let twice = |v: &[usize]| v.iter().flat_map(|&x| [x, x]).collect::<Vec<_>>();
        let pair_index = (0..2 * n).map(|i| i ^ 1).collect();
        Self::new(z, pair_index, twice(labels), twice(instance_ids), twice(view_ids))
    }

    pub fn rows(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Keeps only `rows` (which must be closed under the pairing) and remaps
    /// the pair index.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut position = vec![usize::MAX; self.rows()];
        for (new, &old) in rows.iter().enumerate() {
            position[old] = new;
        }
        let mut pair_index = Vec::with_capacity(rows.len());
        for &old in rows {
            let sibling = position[self.pair_index[old]];
            if sibling == usize::MAX {
                return Err(Error::invalid(format!(
                    "row {old} selected without its augmentation sibling"
                )));
            }
            pair_index.push(sibling);
        }
        let pick = |v: &[usize]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Self::new(
            self.embeddings.select(Axis(0), rows),
            pair_index,
            pick(&self.labels),
            pick(&self.instance_ids),
            pick(&self.view_ids),
        )
    }

    /// Applies the same row permutation to every field: new row `r` is old
    /// row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let pair_index = perm.iter().map(|&old| inverse[self.pair_index[old]]).collect();
        let pick = |v: &[usize]| perm.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Self::new(
            self.embeddings.select(Axis(0), perm),
            pair_index,
            pick(&self.labels),
            pick(&self.instance_ids),
            pick(&self.view_ids),
        )
    }
}
