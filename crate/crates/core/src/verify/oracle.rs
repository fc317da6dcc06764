//! Literal loop transcriptions of the objectives.
//!
//! These deliberately share no code with [`crate::losses`]: no matrix
//! products, no shared softmax helper. Sums use Neumaier compensation.

use ndarray::ArrayView2;

#[derive(Default, Clone, Copy)]
struct Sum {
    total: f64,
    carry: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.total + x;
        if self.total.abs() >= x.abs() {
            self.carry += (self.total - t) + x;
        } else {
            self.carry += (x - t) + self.total;
        }
        self.total = t;
    }

    fn value(self) -> f64 {
        self.total + self.carry
    }
}

/// Conventions shared with the vectorized losses.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub tau: f64,
    pub normalize: bool,
    pub stabilize: bool,
}

fn dot(z: &ArrayView2<f64>, i: usize, k: usize, normalize: bool) -> f64 {
    let d = z.ncols();
    let mut s = Sum::default();
    for c in 0..d {
        s.add(z[[i, c]] * z[[k, c]]);
    }
    if !normalize {
        return s.value();
    }
    let mut ni = Sum::default();
    let mut nk = Sum::default();
    for c in 0..d {
        ni.add(z[[i, c]] * z[[i, c]]);
        nk.add(z[[k, c]] * z[[k, c]]);
    }
    s.value() / (ni.value().sqrt() * nk.value().sqrt())
}

/// `log( exp(s_ij) / sum_{k != i} exp(s_ik) )` computed the way the formula
/// reads, with an optional max shift.
fn log_ratio(z: &ArrayView2<f64>, i: usize, j: usize, opts: OracleOptions) -> f64 {
    let rows = z.nrows();
    let s = |k: usize| dot(z, i, k, opts.normalize) / opts.tau;
    let shift = if opts.stabilize {
        (0..rows).filter(|&k| k != i).map(s).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let mut denominator = Sum::default();
    for k in 0..rows {
        if k != i {
            denominator.add((s(k) - shift).exp());
        }
    }
    (s(j) - shift) - denominator.value().ln()
}

/// Instance-discrimination loss over `2N` rows with sibling map `pair`.
pub fn naive_self_loss(z: ArrayView2<f64>, pair: &[usize], opts: OracleOptions) -> f64 {
    let mut total = Sum::default();
    for i in 0..z.nrows() {
        total.add(-log_ratio(&z, i, pair[i], opts));
    }
    total.value()
}

/// Grouped contrastive loss; rows sharing a group id are positives. Anchors
/// without positives contribute nothing.
pub fn naive_group_loss(z: ArrayView2<f64>, groups: &[usize], opts: OracleOptions) -> f64 {
    let rows = z.nrows();
    let mut total = Sum::default();
    for i in 0..rows {
        let mut positives = 0usize;
        for j in 0..rows {
            if j != i && groups[j] == groups[i] {
                positives += 1;
            }
        }
        if positives == 0 {
            continue;
        }
        let mut anchor = Sum::default();
        for j in 0..rows {
            if j != i && groups[j] == groups[i] {
                anchor.add(log_ratio(&z, i, j, opts));
            }
        }
        total.add(-anchor.value() / positives as f64);
    }
    total.value()
}

/// Redundancy-reduction loss from the cross-correlation formula.
pub fn naive_bt_loss(wa: ArrayView2<f64>, wb: ArrayView2<f64>, alpha: f64) -> f64 {
    let (n, d) = wa.dim();
    let mut invariance = Sum::default();
    let mut redundancy = Sum::default();
    for i in 0..d {
        for j in 0..d {
            let mut num = Sum::default();
            let mut sa = Sum::default();
            let mut sb = Sum::default();
            for b in 0..n {
                num.add(wa[[b, i]] * wb[[b, j]]);
                sa.add(wa[[b, i]] * wa[[b, i]]);
                sb.add(wb[[b, j]] * wb[[b, j]]);
            }
            let c = num.value() / (sa.value().sqrt() * sb.value().sqrt());
            if i == j {
                invariance.add((1.0 - c) * (1.0 - c));
            } else {
                redundancy.add(c * c);
            }
        }
    }
    invariance.value() + alpha * redundancy.value()
}
