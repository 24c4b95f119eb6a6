//! Synthetic datasets under a known pattern-mixture truth, and Monte Carlo
//! calibration of the estimators.
//!
//! Each pair draws its group, then its (pattern, sequence) cell within the
//! group, then a complete 4-vector `N(X_s β^(g), Σ)`; positions the pattern
//! marks missing are blanked. Random numbers come from ChaCha8 with the
//! replicate as stream id and a fixed word offset per pair, so any replicate
//! and any pair can be regenerated independently of execution order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Matrix4, Vector4};
// Float supplies the math methods on f64 when std is absent.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, Method};
use crate::inference::{delta_variance, pooled_means, Z_975};
use crate::model::{CovarianceUnstructured, GroupEffects, PairRecord};
use crate::patterns::{GroupingScheme, PatternId, Sequence};

/// Words of key stream reserved for each pair.
const WORDS_PER_PAIR: u128 = 1 << 24;

/// Probability of one (pattern, sequence) cell within its group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternCell {
    /// Pattern.
    pub pattern: PatternId,
    /// Sequence.
    pub sequence: Sequence,
    /// Probability within the group.
    pub prob: f64,
}

/// True parameters of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGroup {
    /// Label; must match the scheme's label at the same position.
    pub label: String,
    /// Probability that a pair belongs to the group.
    pub prob: f64,
    /// True fixed effects.
    pub effects: GroupEffects,
    /// Cell distribution within the group.
    pub cells: Vec<PatternCell>,
}

/// A data-generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    /// Grouping used both to generate and to fit.
    pub scheme: GroupingScheme,
    /// One entry per scheme group, in scheme order.
    pub groups: Vec<ScenarioGroup>,
    /// True complete-data covariance.
    pub sigma: Matrix4<f64>,
    /// Pairs per dataset.
    pub n_pairs: usize,
    /// Master seed.
    pub seed: u64,
}

fn split_evenly(patterns: &[(u8, f64)]) -> Vec<PatternCell> {
    patterns
        .iter()
        .flat_map(|&(p, w)| {
            Sequence::ALL.map(|s| PatternCell { pattern: PatternId::new(p).expect("valid pattern"), sequence: s, prob: w / 2.0 })
        })
        .collect()
}

/// Covariance used by the built-in scenarios: SD 50, within-subject
/// correlation 0.5, across pair members 0.1.
pub fn default_sigma() -> Matrix4<f64> {
    let (v, within, across) = (2500.0, 1250.0, 250.0);
    Matrix4::new(
        v, within, across, across, //
        within, v, across, across, //
        across, across, v, within, //
        across, across, within, v,
    )
}

impl SimScenario {
    /// Three groups C/D/P with effects of the magnitude seen in asthma
    /// crossover trials (L/min), 200 pairs, missingness completely at random
    /// within group.
    pub fn barge_like(seed: u64) -> Self {
        let scheme = GroupingScheme::completers_dropout_pair();
        let groups = alloc::vec![
            ScenarioGroup {
                label: "C".into(),
                prob: 0.725,
                effects: GroupEffects::from_array([8.1, 20.4, 22.3, 12.6, 3.0, -2.0, 1.5, -1.0]),
                cells: split_evenly(&[(0, 0.94), (10, 0.03), (11, 0.03)]),
            },
            ScenarioGroup {
                label: "D".into(),
                prob: 0.15,
                effects: GroupEffects::from_array([12.0, -23.7, -46.4, -66.8, 4.0, 2.0, -3.0, 1.0]),
                cells: split_evenly(&[(1, 0.4), (2, 0.4), (3, 0.05), (6, 0.1), (7, 0.05)]),
            },
            ScenarioGroup {
                label: "P".into(),
                prob: 0.125,
                effects: GroupEffects::from_array([0.0, -10.0, -30.0, -45.0, -2.0, 1.0, 2.0, -1.5]),
                cells: split_evenly(&[(4, 0.5), (5, 0.5)]),
            },
        ];
        Self { scheme, groups, sigma: default_sigma(), n_pairs: 200, seed }
    }

    /// Two groups, completers (C) and the pooled D+P, where D+P differs
    /// from C by `shift` in the type 2 / treatment B cell. D+P pairs observe
    /// that cell only in patterns 2 and 5, so an analysis ignoring patterns
    /// under-weights the shift.
    pub fn non_ignorable(shift: f64, seed: u64) -> Self {
        let scheme = GroupingScheme::merged_dp();
        let base = [10.0, 20.0, 20.0, 10.0];
        let complete = GroupEffects::from_array([base[0], base[1], base[2], base[3], 2.0, -1.0, 1.0, -0.5]);
        let mut shifted = complete;
        shifted.mu_2b += shift;
        let groups = alloc::vec![
            ScenarioGroup { label: "C".into(), prob: 0.7, effects: complete, cells: split_evenly(&[(0, 1.0)]) },
            ScenarioGroup {
                label: "D+P".into(),
                prob: 0.3,
                effects: shifted,
                cells: split_evenly(&[(1, 0.3), (2, 0.25), (3, 0.05), (4, 0.25), (5, 0.15)]),
            },
        ];
        Self { scheme, groups, sigma: default_sigma(), n_pairs: 200, seed }
    }

    /// Check simplices, group/pattern consistency and Σ.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n_pairs == 0 {
            return bad("n_pairs must be positive".into());
        }
        if self.groups.len() != self.scheme.n_groups() {
            return bad(format!(
                "{} scenario groups for a scheme with {} groups",
                self.groups.len(),
                self.scheme.n_groups()
            ));
        }
        check_simplex("group probabilities", self.groups.iter().map(|g| g.prob))?;
        for (g, group) in self.groups.iter().enumerate() {
            if group.label != self.scheme.label(g) {
                return bad(format!("group {} does not match scheme label {}", group.label, self.scheme.label(g)));
            }
            if group.prob > 0.0 && group.cells.is_empty() {
                return bad(format!("group {} has no pattern cells", group.label));
            }
            if !group.cells.is_empty() {
                check_simplex(&format!("pattern probabilities of {}", group.label), group.cells.iter().map(|c| c.prob))?;
            }
            for c in &group.cells {
                if self.scheme.group_of(c.pattern) != g && c.prob > 0.0 {
                    return bad(format!("pattern {} does not belong to group {}", c.pattern, group.label));
                }
            }
            if group.effects.to_array().iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite effects in group {}", group.label));
            }
        }
        CovarianceUnstructured::new(self.sigma).map_err(|_| Error::InvalidScenario("sigma is not positive definite".into()))?;
        Ok(())
    }

    /// Population cell means `Σ_g π_g μ^(g)`.
    pub fn truth_pooled_means(&self) -> [f64; 4] {
        let mut m = [0.0; 4];
        for g in &self.groups {
            let mu = g.effects.cell_means();
            for k in 0..4 {
                m[k] += g.prob * mu[k];
            }
        }
        m
    }

    /// True value of `c′μ`.
    pub fn truth_contrast(&self, c: [f64; 4]) -> f64 {
        let m = self.truth_pooled_means();
        (0..4).map(|k| c[k] * m[k]).sum()
    }
}

fn check_simplex(what: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in probs {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidScenario(format!("{what}: negative or non-finite entry")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidScenario(format!("{what} sum to {total}, not 1")));
    }
    Ok(())
}

fn pick<T>(items: &[T], weight: impl Fn(&T) -> f64, u: f64) -> &T {
    let mut acc = 0.0;
    for item in items {
        acc += weight(item);
        if u < acc {
            return item;
        }
    }
    items.iter().rev().find(|i| weight(i) > 0.0).unwrap_or(&items[items.len() - 1])
}

/// Dataset for replicate 0.
pub fn simulate_dataset(scn: &SimScenario) -> Result<Vec<PairRecord>> {
    simulate_replicate(scn, 0)
}

/// Dataset for replicate `rep`.
pub fn simulate_replicate(scn: &SimScenario, rep: u64) -> Result<Vec<PairRecord>> {
    scn.validate()?;
    let chol = CovarianceUnstructured::new(scn.sigma)?.cholesky_factor().clone_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    rng.set_stream(rep);
    let mut records = Vec::with_capacity(scn.n_pairs);
    for pair in 0..scn.n_pairs {
        rng.set_word_pos(pair as u128 * WORDS_PER_PAIR);
        let group = pick(&scn.groups, |g| g.prob, rng.random::<f64>());
        let cell = pick(&group.cells, |c| c.prob, rng.random::<f64>());
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let y = Vector4::from(group.effects.mean(cell.sequence)) + chol * z;
        let mask = cell.pattern.mask(cell.sequence).observed();
        let values = core::array::from_fn(|i| mask[i].then_some(y[i]));
        records.push(PairRecord::new(format!("{}", pair + 1), cell.sequence, values)?);
    }
    Ok(records)
}

/// What to fit in each Monte Carlo replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Fitting options for both analyses.
    pub fit: FitOptions,
    /// Contrast under study.
    pub contrast: [f64; 4],
    /// Also fit the single-group (pattern-ignoring) model.
    pub compare_naive: bool,
}

impl CalibrationOptions {
    /// Interaction contrast with the given method.
    pub fn new(method: Method) -> Self {
        Self {
            fit: FitOptions { method, ..FitOptions::default() },
            contrast: crate::inference::interaction_contrast(),
            compare_naive: false,
        }
    }
}

/// Point estimate and standard error of the contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastEstimate {
    /// `γ̂`.
    pub estimate: f64,
    /// Its standard error.
    pub se: f64,
}

/// Result of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    /// Replicate index.
    pub replicate: u64,
    /// Pattern-mixture estimate.
    pub pattern_mixture: Option<ContrastEstimate>,
    /// Pooled cell means of the pattern-mixture fit.
    pub pooled_means: Option<[f64; 4]>,
    /// Pattern-ignoring estimate, when requested.
    pub naive: Option<ContrastEstimate>,
    /// Why the replicate was excluded.
    pub failure: Option<String>,
}

/// Sampling behaviour of one estimator of the contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSummary {
    /// Mean of the estimates.
    pub mean: f64,
    /// Mean minus truth.
    pub bias: f64,
    /// Standard deviation of the estimates across replicates.
    pub empirical_sd: f64,
    /// Mean reported standard error.
    pub mean_se: f64,
    /// Fraction of nominal 95% intervals covering the truth.
    pub coverage: f64,
    /// Monte Carlo standard error of `mean`: `empirical_sd / √reps`.
    pub mc_se: f64,
}

/// Aggregate over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Replicates attempted.
    pub replicates: usize,
    /// Replicates excluded.
    pub failures: usize,
    /// Covariance method.
    pub method: Method,
    /// Pairs per replicate.
    pub n_pairs: usize,
    /// Master seed.
    pub seed: u64,
    /// Contrast studied.
    pub contrast: [f64; 4],
    /// True contrast value.
    pub truth_gamma: f64,
    /// True pooled means.
    pub truth_pooled_means: [f64; 4],
    /// Bias of the pooled cell means.
    pub pooled_mean_bias: [f64; 4],
    /// Pattern-mixture estimator.
    pub pattern_mixture: GammaSummary,
    /// Pattern-ignoring estimator, when requested.
    pub naive: Option<GammaSummary>,
    /// Failure messages with replicate indices.
    pub failure_log: Vec<String>,
}

fn contrast_fit(records: &[PairRecord], scheme: &GroupingScheme, opts: &CalibrationOptions) -> core::result::Result<(ContrastEstimate, [f64; 4]), String> {
    let f = fit(records, scheme, &opts.fit).map_err(|e| format!("{e}"))?;
    if !f.converged {
        return Err("did not converge".into());
    }
    if f.has_non_estimable_means() || f.groups.iter().any(|g| g.estimable.iter().any(|e| !e)) {
        return Err("non-estimable effects".into());
    }
    let r = delta_variance(&f, opts.contrast).map_err(|e| format!("{e}"))?;
    Ok((ContrastEstimate { estimate: r.gamma_hat, se: r.se }, pooled_means(&f).means))
}

/// Generate and fit replicate `rep`.
pub fn run_replicate(scn: &SimScenario, rep: u64, opts: &CalibrationOptions) -> ReplicateOutcome {
    let mut out = ReplicateOutcome { replicate: rep, pattern_mixture: None, pooled_means: None, naive: None, failure: None };
    let records = match simulate_replicate(scn, rep) {
        Ok(r) => r,
        Err(e) => {
            out.failure = Some(format!("{e}"));
            return out;
        }
    };
    match contrast_fit(&records, &scn.scheme, opts) {
        Ok((est, means)) => {
            out.pattern_mixture = Some(est);
            out.pooled_means = Some(means);
        }
        Err(e) => {
            out.failure = Some(format!("pattern-mixture fit: {e}"));
            return out;
        }
    }
    if opts.compare_naive {
        match contrast_fit(&records, &GroupingScheme::single("all"), opts) {
            Ok((est, _)) => out.naive = Some(est),
            Err(e) => out.failure = Some(format!("pattern-ignoring fit: {e}")),
        }
    }
    out
}

fn summarize_gamma(estimates: &[ContrastEstimate], truth: f64) -> GammaSummary {
    let n = estimates.len() as f64;
    if estimates.is_empty() {
        return GammaSummary { mean: f64::NAN, bias: f64::NAN, empirical_sd: f64::NAN, mean_se: f64::NAN, coverage: f64::NAN, mc_se: f64::NAN };
    }
    let mean = estimates.iter().map(|e| e.estimate).sum::<f64>() / n;
    let var = if estimates.len() > 1 {
        estimates.iter().map(|e| (e.estimate - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let empirical_sd = var.sqrt();
    let mean_se = estimates.iter().map(|e| e.se).sum::<f64>() / n;
    let covered = estimates.iter().filter(|e| (e.estimate - truth).abs() <= Z_975 * e.se).count();
    GammaSummary {
        mean,
        bias: mean - truth,
        empirical_sd,
        mean_se,
        coverage: covered as f64 / n,
        mc_se: empirical_sd / n.sqrt(),
    }
}

/// Aggregate replicate outcomes, in the order given.
pub fn summarize(scn: &SimScenario, opts: &CalibrationOptions, outcomes: &[ReplicateOutcome]) -> CalibrationReport {
    let truth_gamma = scn.truth_contrast(opts.contrast);
    let truth_pooled_means = scn.truth_pooled_means();
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let pm: Vec<ContrastEstimate> = ok.iter().filter_map(|o| o.pattern_mixture).collect();
    let naive: Vec<ContrastEstimate> = ok.iter().filter_map(|o| o.naive).collect();
    let mut pooled_mean_bias = [0.0; 4];
    for o in &ok {
        if let Some(m) = o.pooled_means {
            for k in 0..4 {
                pooled_mean_bias[k] += m[k];
            }
        }
    }
    for k in 0..4 {
        pooled_mean_bias[k] = pooled_mean_bias[k] / ok.len() as f64 - truth_pooled_means[k];
    }
    CalibrationReport {
        replicates: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        method: opts.fit.method,
        n_pairs: scn.n_pairs,
        seed: scn.seed,
        contrast: opts.contrast,
        truth_gamma,
        truth_pooled_means,
        pooled_mean_bias,
        pattern_mixture: summarize_gamma(&pm, truth_gamma),
        naive: opts.compare_naive.then(|| summarize_gamma(&naive, truth_gamma)),
        failure_log: outcomes
            .iter()
            .filter_map(|o| o.failure.as_ref().map(|f| format!("replicate {}: {f}", o.replicate)))
            .collect(),
    }
}

/// Run `reps` replicates serially and summarize.
pub fn run_calibration(scn: &SimScenario, reps: usize, opts: &CalibrationOptions) -> Result<CalibrationReport> {
    if reps == 0 {
        return Err(Error::InvalidOptions("reps must be at least 1".into()));
    }
    scn.validate()?;
    opts.fit.validate()?;
    let outcomes: Vec<ReplicateOutcome> = (0..reps as u64).map(|r| run_replicate(scn, r, opts)).collect();
    Ok(summarize(scn, opts, &outcomes))
}
