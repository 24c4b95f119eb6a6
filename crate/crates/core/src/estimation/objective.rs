//! ML and REML objectives on the cell-level sufficient statistics.
//!
//! For a cell of `n` pairs with observed dimension `r`, reduced covariance
//! `S = E Σ Eᵀ`, cell mean `ȳ`, scatter `W` and residual `d = ȳ − E X β`, the
//! log-density contribution is
//!
//! ```text
//! −n r/2 · log 2π − n/2 · log|S| − ½ tr(S⁻¹ W) − n/2 · dᵀ S⁻¹ d
//! ```
//!
//! Gradients with respect to Σ are accumulated as a symmetric 4×4 matrix `G`
//! with `dℓ = tr(G dΣ)` and then chained through `Σ = L Lᵀ` to the
//! log-Cholesky coordinates: `∂ℓ/∂L_ij = 2 (G L)_ij`, times `L_ii` on the
//! diagonal.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;

use super::problem::Problem;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{cholesky_factor, lower_index, N_COV_PARAMS};

/// Fixed effects (full length per group, zero where not estimable) and
/// log-Cholesky covariance coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    /// One coefficient vector per group with data.
    pub betas: Vec<Vec<f64>>,
    /// Log-Cholesky coordinates of Σ.
    pub theta: [f64; N_COV_PARAMS],
}

impl ParameterVector {
    /// Flatten as `(β_1, …, β_G, θ)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.betas.iter().flatten().copied().collect();
        v.extend_from_slice(&self.theta);
        v
    }

    /// Inverse of [`ParameterVector::to_flat`].
    pub fn from_flat(flat: &[f64], n_groups: usize, per_group: usize) -> Self {
        let betas = (0..n_groups).map(|g| flat[g * per_group..(g + 1) * per_group].to_vec()).collect();
        let mut theta = [0.0; N_COV_PARAMS];
        theta.copy_from_slice(&flat[n_groups * per_group..]);
        Self { betas, theta }
    }

    /// Covariance matrix Σ(θ).
    pub fn sigma(&self) -> Matrix4<f64> {
        let l = cholesky_factor(&self.theta);
        l * l.transpose()
    }
}

/// Generalized least-squares fixed effects at a given covariance.
#[derive(Debug, Clone)]
pub struct GlsSolution {
    /// `β̂` per group; non-estimable entries are zero.
    pub betas: Vec<Vec<f64>>,
    /// `(XᵀΩ⁻¹X)⁻¹` per group, zero rows and columns for non-estimable effects.
    pub beta_cov: Vec<DMatrix<f64>>,
    /// `Σ_g log|X_gᵀ Ω_g⁻¹ X_g|` over the estimable columns.
    pub log_det_information: f64,
    /// Inverse information restricted to the estimable columns, per group.
    pub(crate) reduced_cov: Vec<DMatrix<f64>>,
}

struct CellFactors {
    factors: Vec<SpdFactor>,
}

fn factor_cells(problem: &Problem, sigma: &Matrix4<f64>) -> Result<CellFactors> {
    let factors = problem
        .cells()
        .iter()
        .map(|c| {
            SpdFactor::new(&c.selection.project(sigma))
                .ok_or(Error::SingularSubcovariance { pattern: c.pattern.value() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellFactors { factors })
}

fn kept_design(design: &DMatrix<f64>, kept: &[usize]) -> DMatrix<f64> {
    design.select_columns(kept)
}

fn gls(problem: &Problem, f: &CellFactors) -> Result<GlsSolution> {
    let k = problem.params_per_group();
    let mut betas = Vec::with_capacity(problem.groups().len());
    let mut beta_cov = Vec::with_capacity(problem.groups().len());
    let mut reduced_cov = Vec::with_capacity(problem.groups().len());
    let mut log_det_information = 0.0;
    for (g, info) in problem.groups().iter().enumerate() {
        let kept = info.kept();
        let q = kept.len();
        let mut a = DMatrix::zeros(q, q);
        let mut b = DVector::zeros(q);
        for (c, fac) in problem.cells().iter().zip(&f.factors).filter(|(c, _)| c.group == g) {
            let x = kept_design(&c.design, &kept);
            let xs = x.transpose() * &fac.inverse;
            a += &xs * &x * c.n as f64;
            b += &xs * &c.mean * c.n as f64;
        }
        let fa = SpdFactor::new(&a).ok_or_else(|| Error::RankDeficient { group: info.label.clone() })?;
        let beta_kept = fa.solve(&b);
        let mut beta = alloc::vec![0.0; k];
        let mut cov = DMatrix::zeros(k, k);
        for (a_idx, &i) in kept.iter().enumerate() {
            beta[i] = beta_kept[a_idx];
            for (b_idx, &j) in kept.iter().enumerate() {
                cov[(i, j)] = fa.inverse[(a_idx, b_idx)];
            }
        }
        log_det_information += fa.log_det;
        betas.push(beta);
        beta_cov.push(cov);
        reduced_cov.push(fa.inverse);
    }
    Ok(GlsSolution { betas, beta_cov, log_det_information, reduced_cov })
}

/// Value and gradients from one pass over the cells.
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad_theta: [f64; N_COV_PARAMS],
    pub grad_beta: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Objective {
    Ml,
    Reml,
}

/// Evaluate at `theta` with the given fixed effects, or with the GLS
/// solution when `betas` is `None`. REML always uses GLS.
pub(crate) fn evaluate(
    problem: &Problem,
    theta: &[f64; N_COV_PARAMS],
    betas: Option<&[Vec<f64>]>,
    objective: Objective,
    want_gradient: bool,
) -> Result<Evaluation> {
    let l = cholesky_factor(theta);
    let sigma = l * l.transpose();
    let f = factor_cells(problem, &sigma)?;
    let solution = if betas.is_none() || objective == Objective::Reml { Some(gls(problem, &f)?) } else { None };
    let betas: &[Vec<f64>] = match (betas, &solution) {
        (Some(b), _) if objective == Objective::Ml => b,
        (_, Some(s)) => &s.betas,
        _ => unreachable!(),
    };

    let k = problem.params_per_group();
    let kept: Vec<Vec<usize>> = problem.groups().iter().map(|g| g.kept()).collect();
    let mut log_det_sum = 0.0;
    let mut quad = 0.0;
    let mut g_sigma = Matrix4::<f64>::zeros();
    let mut grad_beta = alloc::vec![alloc::vec![0.0; k]; problem.groups().len()];

    for (c, fac) in problem.cells().iter().zip(&f.factors) {
        let n = c.n as f64;
        let beta = DVector::from_row_slice(&betas[c.group]);
        let d = &c.mean - &c.design * &beta;
        let sinv_d = &fac.inverse * &d;
        log_det_sum += n * fac.log_det;
        quad += (&fac.inverse).component_mul(&c.scatter).sum() + n * d.dot(&sinv_d);
        if !want_gradient {
            continue;
        }
        let gb = c.design.transpose() * &sinv_d * n;
        for (acc, v) in grad_beta[c.group].iter_mut().zip(gb.iter()) {
            *acc += v;
        }
        let spread = &c.scatter + &d * d.transpose() * n;
        let mut m = &fac.inverse * spread * &fac.inverse * 0.5 - &fac.inverse * (0.5 * n);
        if objective == Objective::Reml {
            let sol = solution.as_ref().expect("REML carries GLS");
            let x = kept_design(&c.design, &kept[c.group]);
            let sx = &fac.inverse * x;
            m += &sx * &sol.reduced_cov[c.group] * sx.transpose() * (0.5 * n);
        }
        let rows = c.selection.rows();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                g_sigma[(i, j)] += m[(a, b)];
            }
        }
    }

    let ln_2pi = (2.0 * PI).ln();
    let value = match objective {
        Objective::Ml => -0.5 * (problem.n_obs() as f64 * ln_2pi + log_det_sum + quad),
        Objective::Reml => {
            let sol = solution.as_ref().expect("REML carries GLS");
            let dof = (problem.n_obs() - problem.n_estimable()) as f64;
            -0.5 * (dof * ln_2pi + log_det_sum + sol.log_det_information + quad)
        }
    };
    if !value.is_finite() {
        return Err(Error::SingularSubcovariance { pattern: 0 });
    }

    let mut grad_theta = [0.0; N_COV_PARAMS];
    if want_gradient {
        let gl = g_sigma * l;
        for (t, out) in grad_theta.iter_mut().enumerate() {
            let (i, j) = lower_index(t);
            *out = 2.0 * gl[(i, j)] * if i == j { l[(i, i)] } else { 1.0 };
        }
    }
    Ok(Evaluation { value, grad_theta, grad_beta })
}

/// ML log-likelihood of the observed responses at arbitrary `(β, θ)`,
/// including the `2π` constants and excluding the multinomial term.
pub fn ml_objective(problem: &Problem, params: &ParameterVector) -> Result<f64> {
    Ok(evaluate(problem, &params.theta, Some(&params.betas), Objective::Ml, false)?.value)
}

/// Gradient of [`ml_objective`] flattened as `(β_1, …, β_G, θ)`.
pub fn ml_gradient(problem: &Problem, params: &ParameterVector) -> Result<Vec<f64>> {
    let e = evaluate(problem, &params.theta, Some(&params.betas), Objective::Ml, true)?;
    let mut g: Vec<f64> = e.grad_beta.into_iter().flatten().collect();
    g.extend_from_slice(&e.grad_theta);
    Ok(g)
}

/// ML log-likelihood maximized over β for fixed θ, and its θ-gradient.
pub fn profile_ml(problem: &Problem, theta: &[f64; N_COV_PARAMS]) -> Result<(f64, [f64; N_COV_PARAMS])> {
    let e = evaluate(problem, theta, None, Objective::Ml, true)?;
    Ok((e.value, e.grad_theta))
}

/// Restricted log-likelihood
/// `−½ log|Ω| − ½ log|XᵀΩ⁻¹X| − ½ YᵀPY − (n − p)/2 · log 2π`
/// where `p` counts estimable fixed effects.
pub fn reml_objective(problem: &Problem, theta: &[f64; N_COV_PARAMS]) -> Result<f64> {
    Ok(evaluate(problem, theta, None, Objective::Reml, false)?.value)
}

/// [`reml_objective`] with its θ-gradient.
pub fn reml_value_gradient(problem: &Problem, theta: &[f64; N_COV_PARAMS]) -> Result<(f64, [f64; N_COV_PARAMS])> {
    let e = evaluate(problem, theta, None, Objective::Reml, true)?;
    Ok((e.value, e.grad_theta))
}

/// GLS fixed effects and their covariance `(XᵀΩ⁻¹X)⁻¹` at θ.
pub fn gls_beta(problem: &Problem, theta: &[f64; N_COV_PARAMS]) -> Result<GlsSolution> {
    let l = cholesky_factor(theta);
    let f = factor_cells(problem, &(l * l.transpose()))?;
    gls(problem, &f)
}
