use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub(crate) struct SpdFactor {
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = m.clone().cholesky()?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..m.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        let inverse = chol.inverse();
        Some(Self { inverse, log_det, chol })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Greedy column selection in natural order: column `j` is kept when its
/// residual, after projecting onto the columns already kept, retains more than
/// `rel_tol` of its squared norm. `gram` is `XᵀX`.
pub(crate) fn independent_columns(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<bool> {
    let k = gram.nrows();
    let mut keep = alloc::vec![false; k];
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..k {
        let gjj = gram[(j, j)];
        if !(gjj > 0.0) {
            continue;
        }
        let resid = if kept.is_empty() {
            gjj
        } else {
            let sub = DMatrix::from_fn(kept.len(), kept.len(), |a, b| gram[(kept[a], kept[b])]);
            let cross = DVector::from_iterator(kept.len(), kept.iter().map(|&a| gram[(a, j)]));
            match sub.cholesky() {
                Some(c) => gjj - cross.dot(&c.solve(&cross)),
                None => 0.0,
            }
        };
        if resid > rel_tol * gjj {
            keep[j] = true;
            kept.push(j);
        }
    }
    keep
}

/// Symmetric eigenvalue extremes `(min, max)`.
pub(crate) fn eigen_range(m: &nalgebra::Matrix4<f64>) -> (f64, f64) {
    let eig = m.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
