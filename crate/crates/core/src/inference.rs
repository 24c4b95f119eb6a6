//! Population cell means and delta-method inference on contrasts.
//!
//! Population means are the group means weighted by the empirical group
//! proportions, `μ̂_kl = Σ_g π̂_g μ̂_kl^(g)`. With `G` groups the free
//! proportions are those of the first `G − 1` groups and the last one is
//! `1 − Σ` of the others. The variance of the pooled means is `J V Jᵀ` with
//! `V = blockdiag(V(π̂), V(μ̂))`, where `V(π̂) = (Diag(π̂) − π̂π̂ᵀ) / N` and
//! `V(μ̂)` is the GLS covariance of the stacked group means. Everything is on
//! the finite-sample scale, so the reported standard errors are directly
//! usable; `V(μ̂)` conditions on the estimated covariance parameters.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::estimation::ModelFit;

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959963984540054;

/// `c` for `γ = (μ_1A − μ_1B) − (μ_2A − μ_2B)`.
pub fn interaction_contrast() -> [f64; 4] {
    [1.0, -1.0, -1.0, 1.0]
}

/// Standard normal distribution function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Wald statistic and two-sided p-value against the standard normal.
pub fn wald_p(estimate: f64, se: f64) -> (f64, f64) {
    if estimate == 0.0 {
        return (0.0, 1.0);
    }
    let z = estimate / se;
    (z, libm::erfc(z.abs() / core::f64::consts::SQRT_2))
}

/// Pooled means with their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMeans {
    /// `(μ̂_1A, μ̂_1B, μ̂_2A, μ̂_2B)`.
    pub means: [f64; 4],
    /// `J V Jᵀ`.
    pub cov: Matrix4<f64>,
}

impl PooledMeans {
    /// Standard error of cell `i`.
    pub fn se(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0).sqrt()
    }
}

/// Contrast estimate with its Wald test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceResult {
    /// `c′ μ̂`.
    pub gamma_hat: f64,
    /// `√(c′ J V Jᵀ c)`.
    pub se: f64,
    /// `γ̂ / se`.
    pub z: f64,
    /// Two-sided normal p-value.
    pub p_two_sided: f64,
    /// `γ̂ ± 1.959964 · se`.
    pub ci_95: (f64, f64),
    /// The contrast used.
    pub contrast: [f64; 4],
}

/// Ingredients of the delta-method variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaComponents {
    proportions: Vec<f64>,
    group_means: Vec<[f64; 4]>,
    group_mean_cov: Vec<Matrix4<f64>>,
    n_pairs: usize,
}

impl DeltaComponents {
    /// From per-group proportions (summing to 1), cell means and cell-mean
    /// covariances, and the number of pairs.
    pub fn new(
        proportions: Vec<f64>,
        group_means: Vec<[f64; 4]>,
        group_mean_cov: Vec<Matrix4<f64>>,
        n_pairs: usize,
    ) -> Self {
        assert!(!proportions.is_empty(), "at least one group");
        assert_eq!(proportions.len(), group_means.len());
        assert_eq!(proportions.len(), group_mean_cov.len());
        Self { proportions, group_means, group_mean_cov, n_pairs }
    }

    /// From a fitted model.
    pub fn from_fit(fit: &ModelFit) -> Self {
        Self::new(
            fit.group_proportions(),
            fit.groups.iter().map(|g| g.cell_means()).collect(),
            fit.groups.iter().map(|g| g.cell_mean_cov()).collect(),
            fit.n_pairs(),
        )
    }

    /// Number of groups `G`.
    pub fn n_groups(&self) -> usize {
        self.proportions.len()
    }

    /// Free proportions `π̂_1 … π̂_{G−1}`.
    pub fn free_proportions(&self) -> &[f64] {
        &self.proportions[..self.n_groups() - 1]
    }

    /// `(Diag(π̂) − π̂π̂ᵀ) / N` over the free proportions.
    pub fn v_pi(&self) -> DMatrix<f64> {
        let pi = self.free_proportions();
        let n = self.n_pairs as f64;
        DMatrix::from_fn(pi.len(), pi.len(), |i, j| {
            let diag = if i == j { pi[i] } else { 0.0 };
            (diag - pi[i] * pi[j]) / n
        })
    }

    /// Stacked group means, cell-major: `(μ̂_1A^(1), …, μ̂_1A^(G), μ̂_1B^(1), …)`.
    pub fn mu_vec(&self) -> DVector<f64> {
        let g = self.n_groups();
        DVector::from_fn(4 * g, |idx, _| self.group_means[idx % g][idx / g])
    }

    /// Covariance of [`DeltaComponents::mu_vec`]; groups are independent.
    pub fn v_mu(&self) -> DMatrix<f64> {
        let g = self.n_groups();
        DMatrix::from_fn(4 * g, 4 * g, |a, b| {
            let (ka, ga) = (a / g, a % g);
            let (kb, gb) = (b / g, b % g);
            if ga == gb {
                self.group_mean_cov[ga][(ka, kb)]
            } else {
                0.0
            }
        })
    }

    /// `∂μ̂ / ∂π̂`: column `g` holds `μ̂^(g) − μ̂^(G)`.
    pub fn j1(&self) -> DMatrix<f64> {
        let g = self.n_groups();
        let last = self.group_means[g - 1];
        DMatrix::from_fn(4, g - 1, |k, col| self.group_means[col][k] - last[k])
    }

    /// `∂μ̂ / ∂μ̂^(·)`: row `k` holds `π̂_1 … π̂_G` against cell `k`'s group means.
    pub fn j2(&self) -> DMatrix<f64> {
        let g = self.n_groups();
        DMatrix::from_fn(4, 4 * g, |k, col| if col / g == k { self.proportions[col % g] } else { 0.0 })
    }

    /// `J = [J1 | J2]`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (j1, j2) = (self.j1(), self.j2());
        let mut j = DMatrix::zeros(4, j1.ncols() + j2.ncols());
        j.columns_mut(0, j1.ncols()).copy_from(&j1);
        j.columns_mut(j1.ncols(), j2.ncols()).copy_from(&j2);
        j
    }

    /// `V = blockdiag(V(π̂), V(μ̂))`.
    pub fn v(&self) -> DMatrix<f64> {
        let (vp, vm) = (self.v_pi(), self.v_mu());
        let n = vp.nrows() + vm.nrows();
        let mut v = DMatrix::zeros(n, n);
        v.view_mut((0, 0), vp.shape()).copy_from(&vp);
        v.view_mut((vp.nrows(), vp.nrows()), vm.shape()).copy_from(&vm);
        v
    }

    /// Pooled means `Σ_g π̂_g μ̂^(g)`.
    pub fn pooled(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for (pi, mu) in self.proportions.iter().zip(&self.group_means) {
            for k in 0..4 {
                m[k] += pi * mu[k];
            }
        }
        m
    }

    /// `J V Jᵀ`; with `include_proportions = false` the proportions are
    /// treated as known.
    pub fn pooled_cov(&self, include_proportions: bool) -> Matrix4<f64> {
        let j2 = self.j2();
        let mut cov = &j2 * self.v_mu() * j2.transpose();
        if include_proportions && self.n_groups() > 1 {
            let j1 = self.j1();
            cov += &j1 * self.v_pi() * j1.transpose();
        }
        Matrix4::from_fn(|i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]))
    }

    /// Pooled means and covariance.
    pub fn pooled_means(&self) -> PooledMeans {
        PooledMeans { means: self.pooled(), cov: self.pooled_cov(true) }
    }

    /// Contrast inference.
    pub fn contrast(&self, c: [f64; 4]) -> Result<InferenceResult> {
        contrast_inference(&self.pooled_means(), c)
    }
}

/// Pooled means of a fit (Σ_g π̂_g μ̂^(g)) with delta-method covariance.
pub fn pooled_means(fit: &ModelFit) -> PooledMeans {
    DeltaComponents::from_fit(fit).pooled_means()
}

/// Inference on `c′μ` from pooled means.
pub fn contrast_inference(pooled: &PooledMeans, c: [f64; 4]) -> Result<InferenceResult> {
    let cv = Vector4::from(c);
    let gamma_hat = cv.dot(&Vector4::from(pooled.means));
    let var = cv.dot(&(pooled.cov * cv));
    if !(var > f64::MIN_POSITIVE) || !var.is_finite() {
        return Err(Error::DegenerateVariance(var));
    }
    let se = var.sqrt();
    let (z, p_two_sided) = wald_p(gamma_hat, se);
    Ok(InferenceResult {
        gamma_hat,
        se,
        z,
        p_two_sided,
        ci_95: (gamma_hat - Z_975 * se, gamma_hat + Z_975 * se),
        contrast: c,
    })
}

/// Delta-method inference on `c′μ` for a fitted model.
pub fn delta_variance(fit: &ModelFit, c: [f64; 4]) -> Result<InferenceResult> {
    DeltaComponents::from_fit(fit).contrast(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
        let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose() + Matrix4::identity() * 0.1
    }

    fn random_components(rng: &mut ChaCha8Rng, g: usize) -> DeltaComponents {
        let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        DeltaComponents::new(
            raw.iter().map(|r| r / total).collect(),
            (0..g).map(|_| core::array::from_fn(|_| rng.random_range(-50.0..50.0))).collect(),
            (0..g).map(|_| random_spd(rng)).collect(),
            40,
        )
    }

    #[test]
    fn wald_reference_values() {
        let (_, p) = wald_p(-11.7, 22.3);
        assert!((p - 0.600).abs() <= 0.005, "{p}");
        let (_, p) = wald_p(-15.8, 19.4);
        assert!((p - 0.415).abs() <= 0.01, "{p}");
        assert_eq!(wald_p(0.0, 3.0), (0.0, 1.0));
        assert!((standard_normal_cdf(Z_975) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn contrast_examples() {
        let c = interaction_contrast();
        assert_eq!(c, [1.0, -1.0, -1.0, 1.0]);
        let dot = |m: [f64; 4]| (0..4).map(|i| c[i] * m[i]).sum::<f64>();
        assert_eq!(dot([3.0, 3.0, 8.0, 8.0]), 0.0);
        // RA, RP, GA, GP from the pooled table.
        let g = dot([9.2, 8.3, 3.4, -9.2]);
        assert!((g - (-11.7)).abs() < 1e-12);
    }

    #[test]
    fn pooled_arithmetic() {
        let comps = DeltaComponents::new(
            vec![0.725, 0.15, 0.125],
            vec![[10.0, 0.0, 0.0, 0.0], [20.0, 0.0, 0.0, 0.0], [30.0, 0.0, 0.0, 0.0]],
            vec![Matrix4::identity(); 3],
            40,
        );
        assert!((comps.pooled()[0] - 14.0).abs() < 1e-12);
        let degenerate = DeltaComponents::new(
            vec![1.0, 0.0, 0.0],
            vec![[1.0, 2.0, 3.0, 4.0], [5.0; 4], [6.0; 4]],
            vec![Matrix4::identity(); 3],
            40,
        );
        assert_eq!(degenerate.pooled(), [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn jacobian_matches_three_group_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_components(&mut rng, 3);
        let (m, pi) = (&d.group_means, &d.proportions);
        let j = d.jacobian();
        assert_eq!(j.shape(), (4, 14));
        for k in 0..4 {
            assert_eq!(j[(k, 0)], m[0][k] - m[2][k]);
            assert_eq!(j[(k, 1)], m[1][k] - m[2][k]);
            for col in 0..12 {
                let expected = if col / 3 == k { pi[col % 3] } else { 0.0 };
                assert_eq!(j[(k, 2 + col)], expected);
            }
        }
        let v = d.v();
        assert_eq!(v.shape(), (14, 14));
        assert!(v.view((0, 2), (2, 12)).iter().all(|&x| x == 0.0));
        // The delta-method covariance equals the component form.
        let full = &j * v * j.transpose();
        let parts = d.pooled_cov(true);
        for a in 0..4 {
            for b in 0..4 {
                assert!((full[(a, b)] - parts[(a, b)]).abs() < 1e-12 * (1.0 + full[(a, b)].abs()));
            }
        }
    }

    #[test]
    fn single_group_reduces_to_gls_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_components(&mut rng, 1);
        assert_eq!(d.j1().ncols(), 0);
        let c = interaction_contrast();
        let r = d.contrast(c).unwrap();
        let cv = Vector4::from(c);
        let direct = cv.dot(&(d.group_mean_cov[0] * cv)).sqrt();
        assert!((r.se - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn equal_group_means_ignore_proportion_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut d = random_components(&mut rng, 3);
        let m = d.group_means[0];
        d.group_means = vec![m; 3];
        assert!(d.j1().iter().all(|&x| x == 0.0));
        assert_eq!(d.pooled_cov(true), d.pooled_cov(false));
    }

    #[test]
    fn invariant_to_which_group_is_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = interaction_contrast();
        for g in 2..=4 {
            for _ in 0..20 {
                let d = random_components(&mut rng, g);
                let base = d.contrast(c).unwrap().se.powi(2);
                for rot in 1..g {
                    let mut idx: Vec<usize> = (0..g).collect();
                    idx.rotate_left(rot);
                    let permuted = DeltaComponents::new(
                        idx.iter().map(|&i| d.proportions[i]).collect(),
                        idx.iter().map(|&i| d.group_means[i]).collect(),
                        idx.iter().map(|&i| d.group_mean_cov[i]).collect(),
                        d.n_pairs,
                    );
                    let se2 = permuted.contrast(c).unwrap().se.powi(2);
                    assert!((se2 - base).abs() <= 1e-10 * base, "{se2} vs {base}");
                }
            }
        }
    }

    #[test]
    fn proportion_uncertainty_never_decreases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cv = Vector4::from(interaction_contrast());
        for _ in 0..50 {
            let d = random_components(&mut rng, 3);
            let fixed = cv.dot(&(d.pooled_cov(false) * cv));
            let full = cv.dot(&(d.pooled_cov(true) * cv));
            assert!(full >= fixed - 1e-12 * fixed);
        }
    }

    #[test]
    fn gamma_is_weighted_group_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = interaction_contrast();
        let d = random_components(&mut rng, 3);
        let weighted: f64 = d
            .proportions
            .iter()
            .zip(&d.group_means)
            .map(|(p, m)| p * (0..4).map(|k| c[k] * m[k]).sum::<f64>())
            .sum();
        let g = d.contrast(c).unwrap().gamma_hat;
        assert!((g - weighted).abs() < 1e-10 * (1.0 + g.abs()));
    }

    #[test]
    fn degenerate_variance_is_reported() {
        let d = DeltaComponents::new(vec![1.0], vec![[1.0; 4]], vec![Matrix4::zeros()], 10);
        assert!(matches!(d.contrast(interaction_contrast()), Err(Error::DegenerateVariance(_))));
    }
}
