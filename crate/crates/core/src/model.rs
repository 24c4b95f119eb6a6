//! Complete-data mean structure and covariance of the paired crossover model.
//!
//! Washout is assumed complete, so there are no carryover columns. Every pair
//! shares one unstructured 4×4 covariance; groups differ only in their
//! fixed effects.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::patterns::{classify, selection_matrix, ObservationMask, PatternId, Sequence};

/// Names of the eight crossover effects, in parameter order.
pub const EFFECT_NAMES: [&str; 8] = ["mu_1A", "mu_1B", "mu_2A", "mu_2B", "rho_1", "rho_2", "nu_1", "nu_2"];

/// Number of unconstrained covariance parameters.
pub const N_COV_PARAMS: usize = 10;

/// Fixed effects `β^(g)` of one group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupEffects {
    /// Type 1 on treatment A.
    pub mu_1a: f64,
    /// Type 1 on treatment B.
    pub mu_1b: f64,
    /// Type 2 on treatment A.
    pub mu_2a: f64,
    /// Type 2 on treatment B.
    pub mu_2b: f64,
    /// Type 1 period effect.
    pub rho_1: f64,
    /// Type 2 period effect.
    pub rho_2: f64,
    /// Type 1 sequence effect.
    pub nu_1: f64,
    /// Type 2 sequence effect.
    pub nu_2: f64,
}

impl GroupEffects {
    /// From `(μ_1A, μ_1B, μ_2A, μ_2B, ρ_1, ρ_2, ν_1, ν_2)`.
    pub fn from_array(b: [f64; 8]) -> Self {
        Self {
            mu_1a: b[0],
            mu_1b: b[1],
            mu_2a: b[2],
            mu_2b: b[3],
            rho_1: b[4],
            rho_2: b[5],
            nu_1: b[6],
            nu_2: b[7],
        }
    }

    /// Cell means only; period and sequence effects zero.
    pub fn from_cell_means(mu: [f64; 4]) -> Self {
        Self::from_array([mu[0], mu[1], mu[2], mu[3], 0.0, 0.0, 0.0, 0.0])
    }

    /// As an 8-array in parameter order.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.mu_1a, self.mu_1b, self.mu_2a, self.mu_2b, self.rho_1, self.rho_2, self.nu_1,
            self.nu_2,
        ]
    }

    /// `(μ_1A, μ_1B, μ_2A, μ_2B)`.
    pub fn cell_means(&self) -> [f64; 4] {
        [self.mu_1a, self.mu_1b, self.mu_2a, self.mu_2b]
    }

    /// Complete-data mean vector `X_s β` in `(1A, 1B, 2A, 2B)` order.
    pub fn mean(&self, s: Sequence) -> [f64; 4] {
        let m = design_matrix(s) * SMatrix::<f64, 8, 1>::from_row_slice(&self.to_array());
        [m[0], m[1], m[2], m[3]]
    }
}

/// 4×8 design matrix of a sequence; rows `(1A, 1B, 2A, 2B)`, columns in
/// [`EFFECT_NAMES`] order.
///
/// Under AB the A responses come from period 1 (`+ρ`) and every response
/// carries `+ν`; under BA the signs flip accordingly.
pub fn design_matrix(s: Sequence) -> SMatrix<f64, 4, 8> {
    let (period_a, seq) = match s {
        Sequence::AB => (1.0, 1.0),
        Sequence::BA => (-1.0, -1.0),
    };
    #[rustfmt::skip]
    let x = SMatrix::<f64, 4, 8>::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, period_a, 0.0, seq, 0.0,
        0.0, 1.0, 0.0, 0.0, -period_a, 0.0, seq, 0.0,
        0.0, 0.0, 1.0, 0.0, 0.0, period_a, 0.0, seq,
        0.0, 0.0, 0.0, 1.0, 0.0, -period_a, 0.0, seq,
    ]);
    x
}

/// Mean structure used within each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanModel {
    /// Cell means plus type-by-period and type-by-sequence effects (8 per group).
    #[default]
    Crossover,
    /// Cell means only (4 per group); the same mean vector under both sequences.
    CellMeans,
}

impl MeanModel {
    /// Fixed effects per group.
    pub fn n_params(self) -> usize {
        match self {
            MeanModel::Crossover => 8,
            MeanModel::CellMeans => 4,
        }
    }

    /// Parameter names.
    pub fn param_names(self) -> &'static [&'static str] {
        &EFFECT_NAMES[..self.n_params()]
    }

    /// Complete-data design for a sequence, `4 × n_params`.
    pub fn design(self, s: Sequence) -> DMatrix<f64> {
        match self {
            MeanModel::Crossover => {
                let x = design_matrix(s);
                DMatrix::from_fn(4, 8, |i, j| x[(i, j)])
            }
            MeanModel::CellMeans => DMatrix::identity(4, 4),
        }
    }

    /// Expand a parameter vector of this model to crossover effects.
    pub fn to_effects(self, beta: &[f64]) -> GroupEffects {
        match self {
            MeanModel::Crossover => {
                let mut b = [0.0; 8];
                b.copy_from_slice(&beta[..8]);
                GroupEffects::from_array(b)
            }
            MeanModel::CellMeans => GroupEffects::from_cell_means([beta[0], beta[1], beta[2], beta[3]]),
        }
    }
}

/// Index pair `(row, col)` of log-Cholesky parameter `k` (row-major lower triangle).
pub fn lower_index(k: usize) -> (usize, usize) {
    const IDX: [(usize, usize); N_COV_PARAMS] =
        [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2), (3, 3)];
    IDX[k]
}

/// Unstructured 4×4 covariance with its log-Cholesky coordinates.
///
/// `Σ = L Lᵀ` with `L` lower triangular; the coordinates are the lower
/// triangle of `L` in row-major order with the diagonal entries replaced by
/// their logarithms, so every real 10-vector maps to a positive definite Σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceUnstructured {
    sigma: Matrix4<f64>,
    chol: Matrix4<f64>,
}

impl CovarianceUnstructured {
    /// Validate a symmetric positive definite matrix.
    pub fn new(sigma: Matrix4<f64>) -> Result<Self> {
        let scale = sigma.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        for i in 0..4 {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale || !sigma[(i, j)].is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        if (0..4).any(|i| !(chol[(i, i)] > 0.0) || !chol[(i, i)].is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { sigma: sym, chol })
    }

    /// Diagonal covariance.
    pub fn diagonal(variances: [f64; 4]) -> Result<Self> {
        Self::new(Matrix4::from_diagonal(&variances.into()))
    }

    /// Reconstruct from log-Cholesky coordinates.
    pub fn from_log_cholesky(theta: &[f64; N_COV_PARAMS]) -> Self {
        let chol = cholesky_factor(theta);
        Self { sigma: chol * chol.transpose(), chol }
    }

    /// Log-Cholesky coordinates.
    pub fn log_cholesky(&self) -> [f64; N_COV_PARAMS] {
        let mut theta = [0.0; N_COV_PARAMS];
        for (k, t) in theta.iter_mut().enumerate() {
            let (i, j) = lower_index(k);
            *t = if i == j { self.chol[(i, i)].ln() } else { self.chol[(i, j)] };
        }
        theta
    }

    /// The covariance matrix.
    pub fn sigma(&self) -> &Matrix4<f64> {
        &self.sigma
    }

    /// Lower Cholesky factor.
    pub fn cholesky_factor(&self) -> &Matrix4<f64> {
        &self.chol
    }
}

/// Lower-triangular factor for log-Cholesky coordinates.
pub fn cholesky_factor(theta: &[f64; N_COV_PARAMS]) -> Matrix4<f64> {
    let mut l = Matrix4::zeros();
    for (k, &t) in theta.iter().enumerate() {
        let (i, j) = lower_index(k);
        l[(i, j)] = if i == j { t.exp() } else { t };
    }
    l
}

/// One pair's responses in `(1A, 1B, 2A, 2B)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pair_id: String,
    sequence: Sequence,
    y: [Option<f64>; 4],
    pattern: PatternId,
}

impl PairRecord {
    /// Build a record; at least one finite value is required.
    pub fn new(pair_id: impl Into<String>, sequence: Sequence, y: [Option<f64>; 4]) -> Result<Self> {
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NoObservations);
        }
        let pattern = classify(ObservationMask::from_values(&y), sequence)?;
        Ok(Self { pair_id: pair_id.into(), sequence, y, pattern })
    }

    /// Pair identifier.
    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    /// Randomized sequence.
    pub fn sequence(&self) -> Sequence {
        self.sequence
    }

    /// Raw values with missingness.
    pub fn values(&self) -> &[Option<f64>; 4] {
        &self.y
    }

    /// Observation mask.
    pub fn mask(&self) -> ObservationMask {
        ObservationMask::from_values(&self.y)
    }

    /// Missingness pattern.
    pub fn pattern(&self) -> PatternId {
        self.pattern
    }

    /// Observed values, ascending by position.
    pub fn observed(&self) -> Vec<f64> {
        self.y.iter().flatten().copied().collect()
    }
}

/// Mean and covariance of the observed part of a pair in pattern `p`,
/// sequence `s`: `(E X_s β, E Σ Eᵀ)`.
pub fn reduced_moments(
    p: PatternId,
    s: Sequence,
    beta: &GroupEffects,
    cov: &CovarianceUnstructured,
) -> (DVector<f64>, DMatrix<f64>) {
    let e = selection_matrix(p, s);
    (e.extract(&beta.mean(s)), e.project(cov.sigma()))
}
