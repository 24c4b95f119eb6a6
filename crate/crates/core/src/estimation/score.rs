use alloc::vec::Vec;
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;


use super::objective::{evaluate, Objective, ParameterVector};
use super::problem::Problem;
use super::Method;
use crate::linalg::eigen_range;
use crate::model::N_COV_PARAMS;

/// Analytic gradient against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Objective checked.
    pub method: Method,
    /// Analytic gradient. ML: `(β_1, …, β_G, θ)`; REML: θ only.
    pub analytic: Vec<f64>,
    /// Central-difference gradient, same layout.
    pub numeric: Vec<f64>,
    /// `max_i |a_i − n_i| / max(1, |a_i|, |n_i|)`; infinite when an evaluation failed.
    pub max_relative_error: f64,
    /// Euclidean norm of the analytic gradient.
    pub gradient_norm: f64,
    /// Condition number of Σ(θ).
    pub condition_number: f64,
    /// Σ is close to singular and finite differences are unreliable.
    pub ill_conditioned: bool,
}

const ILL_CONDITIONED: f64 = 1e8;

/// Compare the implemented gradient of the ML (over β and θ) or REML (over θ)
/// objective with central differences at relative step `rel_step`.
pub fn score_check(problem: &Problem, params: &ParameterVector, method: Method, rel_step: f64) -> ScoreReport {
    let (lo, hi) = eigen_range(&params.sigma());
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let ill_conditioned = !(condition_number < ILL_CONDITIONED);

    let n_groups = problem.groups().len();
    let per_group = problem.params_per_group();
    let value_at = |flat: &[f64]| -> Option<f64> {
        let p = match method {
            Method::Ml => ParameterVector::from_flat(flat, n_groups, per_group),
            Method::Reml => {
                let mut theta = [0.0; N_COV_PARAMS];
                theta.copy_from_slice(flat);
                ParameterVector { betas: Vec::new(), theta }
            }
        };
        let r = match method {
            Method::Ml => evaluate(problem, &p.theta, Some(&p.betas), Objective::Ml, false),
            Method::Reml => evaluate(problem, &p.theta, None, Objective::Reml, false),
        };
        r.ok().map(|e| e.value)
    };

    let (x, analytic) = match method {
        Method::Ml => (
            params.to_flat(),
            evaluate(problem, &params.theta, Some(&params.betas), Objective::Ml, true)
                .map(|e| {
                    let mut g: Vec<f64> = e.grad_beta.into_iter().flatten().collect();
                    g.extend_from_slice(&e.grad_theta);
                    g
                }),
        ),
        Method::Reml => (
            params.theta.to_vec(),
            evaluate(problem, &params.theta, None, Objective::Reml, true).map(|e| e.grad_theta.to_vec()),
        ),
    };

    let Ok(analytic) = analytic else {
        return ScoreReport {
            method,
            analytic: Vec::new(),
            numeric: Vec::new(),
            max_relative_error: f64::INFINITY,
            gradient_norm: f64::NAN,
            condition_number,
            ill_conditioned: true,
        };
    };

    let mut numeric = Vec::with_capacity(x.len());
    let mut failed = false;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = value_at(&xp);
        xp[i] = x[i] - h;
        let down = value_at(&xp);
        xp[i] = x[i];
        match (up, down) {
            (Some(u), Some(d)) => numeric.push((u - d) / (2.0 * h)),
            _ => {
                failed = true;
                numeric.push(f64::NAN);
            }
        }
    }

    let max_relative_error = if failed {
        f64::INFINITY
    } else {
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    };
    let gradient_norm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
    ScoreReport {
        method,
        analytic,
        numeric,
        max_relative_error,
        gradient_norm,
        condition_number,
        ill_conditioned: ill_conditioned || failed,
    }
}
