//! Damped Newton ascent with a finite-difference Hessian of the analytic
//! gradient and Armijo backtracking.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// One optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// Iteration number, starting at 1.
    pub iteration: usize,
    /// Objective after the step.
    pub objective: f64,
    /// Scaled gradient norm after the step.
    pub gradient_norm: f64,
    /// Accepted step length multiplier.
    pub step: f64,
    /// Levenberg damping used for the direction.
    pub damping: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub obj_tol: f64,
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// `max_i |g_i| · max(1, |x_i|) / max(1, |f|)`.
pub(crate) fn scaled_gradient(g: &[f64], x: &[f64], f: f64) -> f64 {
    let denom = f.abs().max(1.0);
    g.iter().zip(x).map(|(gi, xi)| gi.abs() * xi.abs().max(1.0)).fold(0.0, f64::max) / denom
}

fn hessian<F>(f: &mut F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let (_, gp) = f(&xp)?;
        xp[j] = x[j] - step;
        let (_, gm) = f(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Newton direction on `−H + λI`, raising λ until the system is positive definite.
fn direction(h: &DMatrix<f64>, g: &[f64]) -> (DVector<f64>, f64) {
    let n = g.len();
    let neg = -h;
    let scale = neg.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-8);
    let gv = DVector::from_row_slice(g);
    let mut lambda = 0.0;
    for _ in 0..30 {
        let m = &neg + DMatrix::identity(n, n) * lambda;
        if let Some(c) = m.cholesky() {
            let d = c.solve(&gv);
            if d.iter().all(|v| v.is_finite()) && d.dot(&gv) > 0.0 {
                return (d, lambda);
            }
        }
        lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
    }
    (gv, f64::INFINITY)
}

/// Maximize `f`, which returns value and gradient.
pub(crate) fn maximize<F>(mut f: F, x0: Vec<f64>, s: Settings) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x)?;
    let mut gnorm = scaled_gradient(&grad, &x, value);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    const MAX_COORD_STEP: f64 = 5.0;

    while iterations < s.max_iter {
        iterations += 1;
        let h = hessian(&mut f, &x)?;
        let (mut d, damping) = direction(&h, &grad);
        let biggest = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if biggest > MAX_COORD_STEP {
            d *= MAX_COORD_STEP / biggest;
        }
        let slope = d.dot(&DVector::from_row_slice(&grad));

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(xi, di)| xi + t * di).collect();
            if let Ok((fv, gv)) = f(&trial) {
                if fv.is_finite() && fv >= value + 1e-4 * t * slope {
                    accepted = Some((trial, fv, gv));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((x_new, v_new, g_new)) = accepted else {
            // No ascent possible along the direction: at a stationary point up
            // to rounding, or stuck.
            converged = gnorm <= s.grad_tol;
            break;
        };
        let dx = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        let df = (v_new - value).abs();
        x = x_new;
        value = v_new;
        grad = g_new;
        gnorm = scaled_gradient(&grad, &x, value);
        trace.push(TraceEntry { iteration: iterations, objective: value, gradient_norm: gnorm, step: t, damping });

        if gnorm <= s.grad_tol && (df <= s.obj_tol * value.abs().max(1.0) || dx <= s.step_tol) {
            converged = true;
            break;
        }
    }

    Ok(Outcome { x, value, gradient_norm: gnorm, iterations, converged, trace })
}
