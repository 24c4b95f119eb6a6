//! Maximum likelihood and restricted maximum likelihood fitting.
//!
//! The fixed effects enter the model linearly, so for a given covariance
//! they are available in closed form by generalized least squares. Both
//! objectives are therefore optimized over the ten log-Cholesky covariance
//! coordinates only, by damped Newton iteration on the analytic gradient.
//! Pattern proportions are multinomial and estimated in closed form.

mod objective;
mod optimize;
mod problem;
mod score;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, Matrix4};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;

pub use objective::{
    gls_beta, ml_gradient, ml_objective, profile_ml, reml_objective, reml_value_gradient, GlsSolution,
    ParameterVector,
};
pub use optimize::TraceEntry;
pub use problem::{Cell, GroupInfo, Problem};
pub use score::{score_check, ScoreReport};

use crate::error::{Error, Result};
use crate::linalg::eigen_range;
use crate::model::{CovarianceUnstructured, GroupEffects, MeanModel, PairRecord, N_COV_PARAMS};
use crate::patterns::{GroupingScheme, PatternCounts, PatternId, Sequence, N_PATTERNS};

/// Likelihood used for the covariance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Maximum likelihood.
    Ml,
    /// Restricted maximum likelihood.
    #[default]
    Reml,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ml => "ML",
            Method::Reml => "REML",
        })
    }
}

/// Starting covariance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Init {
    /// Diagonal of available-case per-position sample variances.
    #[default]
    MomentStart,
    /// Caller-provided covariance.
    UserSupplied(CovarianceUnstructured),
}

/// Fitting options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// ML or REML.
    pub method: Method,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Scaled gradient tolerance: `max_i |g_i|·max(1,|θ_i|) / max(1,|ℓ|)`.
    pub grad_tol: f64,
    /// Relative parameter-change tolerance.
    pub step_tol: f64,
    /// Relative objective-change tolerance.
    pub obj_tol: f64,
    /// Starting point.
    pub init: Init,
    /// Mean structure within groups.
    pub mean_model: MeanModel,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Reml,
            max_iter: 200,
            grad_tol: 1e-6,
            step_tol: 1e-10,
            obj_tol: 1e-10,
            init: Init::MomentStart,
            mean_model: MeanModel::Crossover,
        }
    }
}

impl FitOptions {
    /// Check tolerances and iteration cap.
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidOptions("max_iter must be at least 1".into()));
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("step_tol", self.step_tol), ("obj_tol", self.obj_tol)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidOptions(alloc::format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Estimated pattern and group proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct Proportions {
    /// `π̂_ps = n_ps / n_s` per sequence; `None` when the sequence has no pairs.
    pub by_sequence: [Option<[f64; N_PATTERNS]>; 2],
    /// `π̂_g = n_g / N` in scheme order.
    pub by_group: Vec<f64>,
}

impl Proportions {
    /// `π̂_ps`.
    pub fn pattern_sequence(&self, p: PatternId, s: Sequence) -> Result<f64> {
        self.by_sequence[s.index()].map(|v| v[p.index()]).ok_or(Error::EmptySequence(s.number()))
    }
}

/// Closed-form multinomial estimates. The per-sequence simplex constraints
/// make `n_ps / n_s` the constrained maximizer.
pub fn estimate_proportions(counts: &PatternCounts) -> Result<Proportions> {
    if counts.total == 0 {
        return Err(Error::EmptyData);
    }
    let mut by_sequence = [None; 2];
    for s in 0..2 {
        let n_s = counts.by_sequence[s];
        if n_s > 0 {
            let mut v = [0.0; N_PATTERNS];
            for (p, out) in v.iter_mut().enumerate() {
                *out = counts.by_pattern[p][s] as f64 / n_s as f64;
            }
            by_sequence[s] = Some(v);
        }
    }
    let n = counts.total as f64;
    let by_group = counts.by_group.iter().map(|&c| c as f64 / n).collect();
    Ok(Proportions { by_sequence, by_group })
}

/// `Σ n_ps log π_ps`, with `0 · log 0 = 0`.
pub fn multinomial_loglik(counts: &PatternCounts, by_sequence: &[[f64; N_PATTERNS]; 2]) -> f64 {
    let mut ll = 0.0;
    for p in 0..N_PATTERNS {
        for s in 0..2 {
            let n = counts.by_pattern[p][s];
            if n > 0 {
                ll += n as f64 * by_sequence[s][p].ln();
            }
        }
    }
    ll
}

/// Conditions worth reporting alongside a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// A scheme group had no pairs and was left out.
    EmptyGroup {
        /// Group label.
        group: String,
    },
    /// A group has fewer pairs than the scheme's threshold.
    SparseGroup {
        /// Group label.
        group: String,
        /// Pairs in the group.
        n_pairs: usize,
        /// Threshold.
        min_pairs: usize,
    },
    /// Some effects of a group are not identified by its patterns; they
    /// are fixed at zero.
    NonEstimable {
        /// Group label.
        group: String,
        /// Effect names.
        effects: Vec<&'static str>,
    },
    /// Σ̂ is close to singular.
    Boundary {
        /// Smallest over largest eigenvalue of Σ̂.
        eigenvalue_ratio: f64,
    },
    /// The optimizer stopped before meeting the convergence criteria.
    NonConvergence {
        /// Iterations used.
        iterations: usize,
        /// Final scaled gradient norm.
        gradient_norm: f64,
    },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::EmptyGroup { group } => write!(f, "group {group} has no pairs and was omitted"),
            FitWarning::SparseGroup { group, n_pairs, min_pairs } => write!(
                f,
                "group {group} has {n_pairs} pairs (< {min_pairs}); its effects may be poorly identified"
            ),
            FitWarning::NonEstimable { group, effects } => {
                write!(f, "group {group}: effects ")?;
                for (i, e) in effects.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(e)?;
                }
                write!(f, " are not estimable and were fixed at 0; consider merging {group} with another group")
            }
            FitWarning::Boundary { eigenvalue_ratio } => {
                write!(f, "estimated covariance is near singular (eigenvalue ratio {eigenvalue_ratio:e})")
            }
            FitWarning::NonConvergence { iterations, gradient_norm } => write!(
                f,
                "optimizer did not converge after {iterations} iterations (scaled gradient {gradient_norm:e})"
            ),
        }
    }
}

/// Estimates for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    /// Group label.
    pub label: String,
    /// Pairs in the group.
    pub n_pairs: usize,
    /// Observed responses in the group.
    pub n_obs: usize,
    /// `β̂^(g)` in the mean model's parameter order.
    pub beta: Vec<f64>,
    /// `(X_gᵀΩ_g⁻¹X_g)⁻¹`, zero for non-estimable effects.
    pub beta_cov: DMatrix<f64>,
    /// Estimability flags.
    pub estimable: Vec<bool>,
}

impl GroupEstimate {
    /// `(μ̂_1A, μ̂_1B, μ̂_2A, μ̂_2B)`.
    pub fn cell_means(&self) -> [f64; 4] {
        [self.beta[0], self.beta[1], self.beta[2], self.beta[3]]
    }

    /// Covariance of the cell means.
    pub fn cell_mean_cov(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.beta_cov[(i, j)])
    }

    /// Standard error of effect `j`; `None` when not estimable.
    pub fn se(&self, j: usize) -> Option<f64> {
        self.estimable[j].then(|| self.beta_cov[(j, j)].max(0.0).sqrt())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct ModelFit {
    /// ML or REML.
    pub method: Method,
    /// Mean structure.
    pub mean_model: MeanModel,
    /// Groups with data, in scheme order.
    pub groups: Vec<GroupEstimate>,
    /// Fixed effects and covariance coordinates at the optimum.
    pub params: ParameterVector,
    /// Σ̂.
    pub covariance: CovarianceUnstructured,
    /// Pattern and group proportions (scheme order).
    pub proportions: Proportions,
    /// Frequencies.
    pub counts: PatternCounts,
    /// Objective at the optimum: ML log-likelihood (without the multinomial
    /// term) or restricted log-likelihood.
    pub loglik: f64,
    /// Objective at the starting point.
    pub initial_loglik: f64,
    /// Convergence criteria met.
    pub converged: bool,
    /// Newton iterations.
    pub iterations: usize,
    /// Final scaled gradient norm.
    pub gradient_norm: f64,
    /// Diagnostics.
    pub warnings: Vec<FitWarning>,
    /// Per-iteration optimizer trace.
    pub trace: Vec<TraceEntry>,
    /// Observed responses.
    pub n_obs: usize,
    scheme_index: Vec<usize>,
}

impl ModelFit {
    /// Total pairs `N`.
    pub fn n_pairs(&self) -> usize {
        self.counts.total
    }

    /// `π̂_g` for the fitted groups, in [`ModelFit::groups`] order.
    pub fn group_proportions(&self) -> Vec<f64> {
        self.scheme_index.iter().map(|&i| self.proportions.by_group[i]).collect()
    }

    /// Σ̂.
    pub fn sigma(&self) -> &Matrix4<f64> {
        self.covariance.sigma()
    }

    /// Crossover effects of group `g`.
    pub fn group_effects(&self, g: usize) -> GroupEffects {
        self.mean_model.to_effects(&self.groups[g].beta)
    }

    /// Whether any cell mean of any group is not estimable.
    pub fn has_non_estimable_means(&self) -> bool {
        self.groups.iter().any(|g| g.estimable[..4].iter().any(|e| !e))
    }
}

/// Available-case per-position variances, used as a diagonal start.
pub fn moment_start(problem: &Problem) -> CovarianceUnstructured {
    let mut n = [0.0f64; 4];
    let mut sum = [0.0f64; 4];
    for c in problem.cells() {
        for (a, &i) in c.selection.rows().iter().enumerate() {
            n[i] += c.n as f64;
            sum[i] += c.n as f64 * c.mean[a];
        }
    }
    let mut ss = [0.0f64; 4];
    for c in problem.cells() {
        for (a, &i) in c.selection.rows().iter().enumerate() {
            let grand = sum[i] / n[i];
            ss[i] += c.scatter[(a, a)] + c.n as f64 * (c.mean[a] - grand).powi(2);
        }
    }
    let mut var = [f64::NAN; 4];
    for i in 0..4 {
        if n[i] >= 2.0 {
            var[i] = ss[i] / (n[i] - 1.0);
        }
    }
    let valid: Vec<f64> = var.iter().copied().filter(|v| v.is_finite() && *v > 0.0).collect();
    let fallback = if valid.is_empty() { 1.0 } else { valid.iter().sum::<f64>() / valid.len() as f64 };
    let floor = fallback * 1e-6;
    for v in &mut var {
        if !(v.is_finite() && *v > floor) {
            *v = fallback;
        }
    }
    CovarianceUnstructured::diagonal(var).expect("positive diagonal")
}

/// Fit the pattern-mixture model to `records` grouped by `scheme`.
pub fn fit(records: &[PairRecord], scheme: &GroupingScheme, opts: &FitOptions) -> Result<ModelFit> {
    opts.validate()?;
    let problem = Problem::new(records, scheme, opts.mean_model)?;
    fit_problem(&problem, opts)
}

/// Fit a prepared [`Problem`].
pub fn fit_problem(problem: &Problem, opts: &FitOptions) -> Result<ModelFit> {
    opts.validate()?;
    let start = match opts.init {
        Init::MomentStart => moment_start(problem),
        Init::UserSupplied(c) => c,
    };
    let method = opts.method;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut theta = [0.0; N_COV_PARAMS];
        theta.copy_from_slice(x);
        let (v, g) = match method {
            Method::Ml => profile_ml(problem, &theta)?,
            Method::Reml => reml_value_gradient(problem, &theta)?,
        };
        Ok((v, g.to_vec()))
    };
    let x0 = start.log_cholesky().to_vec();
    let initial_loglik = objective(&x0)?.0;
    let settings = optimize::Settings {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        step_tol: opts.step_tol,
        obj_tol: opts.obj_tol,
    };
    let out = optimize::maximize(objective, x0, settings)?;

    let mut theta = [0.0; N_COV_PARAMS];
    theta.copy_from_slice(&out.x);
    let covariance = CovarianceUnstructured::from_log_cholesky(&theta);
    let gls = gls_beta(problem, &theta)?;
    let proportions = estimate_proportions(problem.counts())?;

    let mut warnings = Vec::new();
    let scheme = problem.scheme();
    for (g, label) in scheme.labels().iter().enumerate() {
        if problem.counts().by_group[g] == 0 {
            warnings.push(FitWarning::EmptyGroup { group: label.clone() });
        }
    }
    let names = opts.mean_model.param_names();
    for info in problem.groups() {
        if info.n_pairs < scheme.min_pairs_per_group {
            warnings.push(FitWarning::SparseGroup {
                group: info.label.clone(),
                n_pairs: info.n_pairs,
                min_pairs: scheme.min_pairs_per_group,
            });
        }
        if info.rank() < info.estimable.len() {
            let effects = names.iter().zip(&info.estimable).filter(|(_, &e)| !e).map(|(n, _)| *n).collect();
            warnings.push(FitWarning::NonEstimable { group: info.label.clone(), effects });
        }
    }
    let (lo, hi) = eigen_range(covariance.sigma());
    if lo / hi < 1e-8 {
        warnings.push(FitWarning::Boundary { eigenvalue_ratio: lo / hi });
    }
    if !out.converged {
        warnings.push(FitWarning::NonConvergence { iterations: out.iterations, gradient_norm: out.gradient_norm });
    }

    let groups = problem
        .groups()
        .iter()
        .zip(gls.betas.iter().zip(&gls.beta_cov))
        .map(|(info, (beta, cov))| GroupEstimate {
            label: info.label.clone(),
            n_pairs: info.n_pairs,
            n_obs: info.n_obs,
            beta: beta.clone(),
            beta_cov: cov.clone(),
            estimable: info.estimable.clone(),
        })
        .collect();

    Ok(ModelFit {
        method,
        mean_model: opts.mean_model,
        groups,
        params: ParameterVector { betas: gls.betas, theta },
        covariance,
        proportions,
        counts: problem.counts().clone(),
        loglik: out.value,
        initial_loglik,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.gradient_norm,
        warnings,
        trace: out.trace,
        n_obs: problem.n_obs(),
        scheme_index: problem.groups().iter().map(|g| g.scheme_index).collect(),
    })
}
