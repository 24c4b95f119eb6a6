//! Serializable report layouts. Field order is fixed so that output is
//! stable for diffing.

use serde::Serialize;

use crossmix_core::estimation::{FitWarning, TraceEntry};
use crossmix_core::inference::PooledMeans;
use crossmix_core::patterns::PatternCounts;
use crossmix_core::simulate::{CalibrationReport, GammaSummary};
use crossmix_core::{GroupingScheme, InferenceResult, ModelFit, PatternId, SimScenario, Sequence};

use crate::config::Labels;
use crate::data::Dataset;

/// Complete output of `fit`.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// `pattern-mixture` or `pattern-ignoring`.
    pub analysis: &'static str,
    /// `ML` or `REML`.
    pub method: String,
    /// Data provenance.
    pub input: InputSection,
    /// Groups used for estimation.
    pub grouping: GroupingSection,
    /// Frequencies by pattern, sequence and group.
    pub pattern_counts: CountsSection,
    /// Estimated proportions.
    pub proportions: ProportionsSection,
    /// Per-group effects.
    pub groups: Vec<GroupSection>,
    /// Σ̂.
    pub covariance: CovarianceSection,
    /// Proportion-weighted cell means.
    pub pooled_means: Vec<CellMean>,
    /// Contrast test; absent when its variance is degenerate.
    pub contrast: Option<ContrastSection>,
    /// Optimizer state.
    pub convergence: ConvergenceSection,
    /// Human-readable diagnostics.
    pub warnings: Vec<String>,
    /// Per-iteration trace, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

/// Where the data came from.
#[derive(Debug, Clone, Serialize)]
pub struct InputSection {
    /// Path or description.
    pub source: String,
    /// Data rows read.
    pub rows: usize,
    /// Records analysed.
    pub records: usize,
    /// Dropped rows.
    pub rejected: Vec<RejectedRow>,
}

/// A dropped row.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    /// Line number.
    pub line: u64,
    /// Id as read.
    pub pair_id: String,
    /// Reason.
    pub reason: String,
}

/// Grouping description.
#[derive(Debug, Clone, Serialize)]
pub struct GroupingSection {
    /// Groups in order.
    pub groups: Vec<GroupDef>,
    /// Sparse-group threshold.
    pub min_pairs: usize,
}

/// One group definition.
#[derive(Debug, Clone, Serialize)]
pub struct GroupDef {
    /// Label.
    pub label: String,
    /// Member patterns.
    pub patterns: Vec<u8>,
}

/// One pattern's counts.
#[derive(Debug, Clone, Serialize)]
pub struct PatternRow {
    /// Pattern number.
    pub pattern: u8,
    /// `X`/`?` mask by period (subject 1 period 1, subject 1 period 2, subject 2 period 1, subject 2 period 2).
    pub mask: String,
    /// Group label.
    pub group: String,
    /// Pairs in sequence AB.
    pub sequence_1: usize,
    /// Pairs in sequence BA.
    pub sequence_2: usize,
    /// Both sequences.
    pub total: usize,
}

/// Pairs in one group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCount {
    /// Label.
    pub label: String,
    /// Pairs.
    pub n: usize,
}

/// Frequencies.
#[derive(Debug, Clone, Serialize)]
pub struct CountsSection {
    /// All fifteen patterns.
    pub patterns: Vec<PatternRow>,
    /// Pairs per group.
    pub groups: Vec<GroupCount>,
    /// Pairs per sequence, AB then BA.
    pub sequences: [usize; 2],
    /// All pairs.
    pub total: usize,
}

/// Group proportion.
#[derive(Debug, Clone, Serialize)]
pub struct GroupProportion {
    /// Label.
    pub label: String,
    /// `n_g / N`.
    pub proportion: f64,
}

/// Pattern proportion within sequences.
#[derive(Debug, Clone, Serialize)]
pub struct PatternProportion {
    /// Pattern.
    pub pattern: u8,
    /// `n_p1 / n_1`; null when the sequence is empty.
    pub sequence_1: Option<f64>,
    /// `n_p2 / n_2`.
    pub sequence_2: Option<f64>,
}

/// Proportions.
#[derive(Debug, Clone, Serialize)]
pub struct ProportionsSection {
    /// By group.
    pub groups: Vec<GroupProportion>,
    /// By pattern within sequence.
    pub patterns: Vec<PatternProportion>,
}

/// Effect estimate.
#[derive(Debug, Clone, Serialize)]
pub struct Effect {
    /// Effect name.
    pub name: String,
    /// Display label.
    pub label: String,
    /// Estimate; zero when not estimable.
    pub estimate: f64,
    /// Standard error; null when not estimable.
    pub se: Option<f64>,
    /// Whether the group's patterns identify it.
    pub estimable: bool,
}

/// One group's results.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSection {
    /// Label.
    pub label: String,
    /// Pairs.
    pub n_pairs: usize,
    /// Observed responses.
    pub n_obs: usize,
    /// `π̂_g`.
    pub proportion: f64,
    /// Fixed effects.
    pub effects: Vec<Effect>,
}

/// Σ̂ and correlations.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceSection {
    /// Position order.
    pub order: [String; 4],
    /// Covariance rows.
    pub sigma: [[f64; 4]; 4],
    /// Correlation rows.
    pub correlation: [[f64; 4]; 4],
}

/// A pooled cell mean.
#[derive(Debug, Clone, Serialize)]
pub struct CellMean {
    /// `1A`, `1B`, `2A`, `2B`.
    pub cell: String,
    /// Display label.
    pub label: String,
    /// Estimate.
    pub estimate: f64,
    /// Delta-method standard error.
    pub se: f64,
}

/// Wald test of `c′μ`.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastSection {
    /// Coefficients over (1A, 1B, 2A, 2B).
    pub coefficients: [f64; 4],
    /// Estimate.
    pub estimate: f64,
    /// Standard error.
    pub se: f64,
    /// Wald statistic.
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// 95% interval.
    pub ci_95: [f64; 2],
}

/// Optimizer state at exit.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSection {
    /// Criteria met.
    pub converged: bool,
    /// Iterations.
    pub iterations: usize,
    /// Scaled gradient norm.
    pub gradient_norm: f64,
    /// Maximized objective.
    pub objective: f64,
    /// Objective at the start.
    pub initial_objective: f64,
    /// Multinomial log-likelihood of the pattern counts at π̂.
    pub pattern_loglik: f64,
}

/// One optimizer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    /// Iteration.
    pub iteration: usize,
    /// Objective.
    pub objective: f64,
    /// Scaled gradient norm.
    pub gradient_norm: f64,
    /// Step multiplier.
    pub step: f64,
    /// Damping.
    pub damping: f64,
}

impl From<&TraceEntry> for TraceRow {
    fn from(t: &TraceEntry) -> Self {
        Self { iteration: t.iteration, objective: t.objective, gradient_norm: t.gradient_norm, step: t.step, damping: t.damping }
    }
}

const CELLS: [&str; 4] = ["1A", "1B", "2A", "2B"];

/// `X`/`?` rendering of a mask.
pub fn mask_string(flags: [bool; 4]) -> String {
    flags.iter().map(|&b| if b { "X" } else { "?" }).collect::<Vec<_>>().join(" ")
}

fn effect_label(name: &str, labels: &Labels) -> String {
    match name {
        "mu_1A" => format!("mean {}", labels.cell(0)),
        "mu_1B" => format!("mean {}", labels.cell(1)),
        "mu_2A" => format!("mean {}", labels.cell(2)),
        "mu_2B" => format!("mean {}", labels.cell(3)),
        "rho_1" => format!("period, type {}", labels.type_1),
        "rho_2" => format!("period, type {}", labels.type_2),
        "nu_1" => format!("sequence, type {}", labels.type_1),
        "nu_2" => format!("sequence, type {}", labels.type_2),
        other => other.to_string(),
    }
}

/// Grouping description.
pub fn grouping_section(scheme: &GroupingScheme) -> GroupingSection {
    GroupingSection {
        groups: (0..scheme.n_groups())
            .map(|g| GroupDef {
                label: scheme.label(g).to_string(),
                patterns: scheme.patterns_of(g).iter().map(|p| p.value()).collect(),
            })
            .collect(),
        min_pairs: scheme.min_pairs_per_group,
    }
}

/// Frequencies under `scheme`.
pub fn counts_section(counts: &PatternCounts, scheme: &GroupingScheme) -> CountsSection {
    CountsSection {
        patterns: PatternId::all()
            .map(|p| {
                let [a, b] = counts.by_pattern[p.index()];
                PatternRow {
                    pattern: p.value(),
                    mask: mask_string(p.period_layout()),
                    group: scheme.label(scheme.group_of(p)).to_string(),
                    sequence_1: a,
                    sequence_2: b,
                    total: a + b,
                }
            })
            .collect(),
        groups: (0..scheme.n_groups())
            .map(|g| GroupCount { label: scheme.label(g).to_string(), n: counts.by_group[g] })
            .collect(),
        sequences: counts.by_sequence,
        total: counts.total,
    }
}

fn input_section(data: &Dataset) -> InputSection {
    InputSection {
        source: data.source.clone(),
        rows: data.rows,
        records: data.records.len(),
        rejected: data
            .rejected
            .iter()
            .map(|r| RejectedRow { line: r.line, pair_id: r.pair_id.clone(), reason: r.reason.to_string() })
            .collect(),
    }
}

fn contrast_section(r: &InferenceResult) -> ContrastSection {
    ContrastSection {
        coefficients: r.contrast,
        estimate: r.gamma_hat,
        se: r.se,
        z: r.z,
        p_value: r.p_two_sided,
        ci_95: [r.ci_95.0, r.ci_95.1],
    }
}

/// Everything needed to render a fit.
pub struct FitInputs<'a> {
    /// Parsed data.
    pub data: &'a Dataset,
    /// Grouping used.
    pub scheme: &'a GroupingScheme,
    /// Fit.
    pub fit: &'a ModelFit,
    /// Pooled means.
    pub pooled: &'a PooledMeans,
    /// Contrast test, or why it is unavailable.
    pub contrast: Result<InferenceResult, String>,
    /// Pattern-ignoring analysis.
    pub naive: bool,
    /// Include the trace.
    pub trace: bool,
    /// Display names.
    pub labels: &'a Labels,
}

/// Assemble the fit report.
pub fn fit_report(x: FitInputs<'_>) -> FitReport {
    let fit = x.fit;
    let props = fit.group_proportions();
    let groups = fit
        .groups
        .iter()
        .zip(&props)
        .map(|(g, &pi)| GroupSection {
            label: g.label.clone(),
            n_pairs: g.n_pairs,
            n_obs: g.n_obs,
            proportion: pi,
            effects: fit
                .mean_model
                .param_names()
                .iter()
                .enumerate()
                .map(|(j, name)| Effect {
                    name: name.to_string(),
                    label: effect_label(name, x.labels),
                    estimate: g.beta[j],
                    se: g.se(j),
                    estimable: g.estimable[j],
                })
                .collect(),
        })
        .collect();

    let sigma = fit.sigma();
    let covariance = CovarianceSection {
        order: CELLS.map(String::from),
        sigma: std::array::from_fn(|i| std::array::from_fn(|j| sigma[(i, j)])),
        correlation: std::array::from_fn(|i| {
            std::array::from_fn(|j| sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt())
        }),
    };

    let mut warnings: Vec<String> = x.data.rejected.iter().map(|r| format!("rejected {r}")).collect();
    warnings.extend(fit.warnings.iter().map(FitWarning::to_string));
    let contrast = match x.contrast {
        Ok(r) => Some(contrast_section(&r)),
        Err(e) => {
            warnings.push(format!("contrast not tested: {e}"));
            None
        }
    };

    let by_sequence = [
        fit.proportions.by_sequence[0].unwrap_or([0.0; 15]),
        fit.proportions.by_sequence[1].unwrap_or([0.0; 15]),
    ];
    FitReport {
        analysis: if x.naive { "pattern-ignoring" } else { "pattern-mixture" },
        method: fit.method.to_string(),
        input: input_section(x.data),
        grouping: grouping_section(x.scheme),
        pattern_counts: counts_section(&fit.counts, x.scheme),
        proportions: ProportionsSection {
            groups: x
                .scheme
                .labels()
                .iter()
                .zip(&fit.proportions.by_group)
                .map(|(l, &p)| GroupProportion { label: l.clone(), proportion: p })
                .collect(),
            patterns: PatternId::all()
                .map(|p| PatternProportion {
                    pattern: p.value(),
                    sequence_1: fit.proportions.pattern_sequence(p, Sequence::AB).ok(),
                    sequence_2: fit.proportions.pattern_sequence(p, Sequence::BA).ok(),
                })
                .collect(),
        },
        groups,
        covariance,
        pooled_means: (0..4)
            .map(|k| CellMean {
                cell: CELLS[k].to_string(),
                label: x.labels.cell(k),
                estimate: x.pooled.means[k],
                se: x.pooled.se(k),
            })
            .collect(),
        contrast,
        convergence: ConvergenceSection {
            converged: fit.converged,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            objective: fit.loglik,
            initial_objective: fit.initial_loglik,
            pattern_loglik: crossmix_core::estimation::multinomial_loglik(&fit.counts, &by_sequence),
        },
        warnings,
        trace: x.trace.then(|| fit.trace.iter().map(TraceRow::from).collect()),
    }
}

/// Output of `simulate`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    /// Truth.
    pub scenario: ScenarioSection,
    /// `ML` or `REML`.
    pub method: String,
    /// Replicates attempted.
    pub replicates: usize,
    /// Replicates excluded.
    pub failures: usize,
    /// Contrast studied.
    pub contrast: [f64; 4],
    /// True contrast value.
    pub truth_gamma: f64,
    /// True pooled means.
    pub truth_pooled_means: [f64; 4],
    /// Mean pooled estimate minus truth.
    pub pooled_mean_bias: [f64; 4],
    /// Pattern-mixture estimator.
    pub pattern_mixture: GammaSection,
    /// Pattern-ignoring estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_ignoring: Option<GammaSection>,
    /// Why replicates were excluded.
    pub failure_log: Vec<String>,
}

/// Scenario summary.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSection {
    /// Pairs per replicate.
    pub n_pairs: usize,
    /// Master seed.
    pub seed: u64,
    /// Group labels, probabilities and effects.
    pub groups: Vec<ScenarioGroupRow>,
    /// True Σ.
    pub sigma: [[f64; 4]; 4],
}

/// One scenario group.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioGroupRow {
    /// Label.
    pub label: String,
    /// Probability.
    pub probability: f64,
    /// Effects in parameter order.
    pub effects: [f64; 8],
}

/// Sampling summary of one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct GammaSection {
    /// Mean estimate.
    pub mean: f64,
    /// Mean minus truth.
    pub bias: f64,
    /// Monte Carlo standard error of the mean.
    pub mc_se: f64,
    /// Standard deviation across replicates.
    pub empirical_sd: f64,
    /// Mean reported standard error.
    pub mean_se: f64,
    /// Ratio of mean reported se to empirical SD.
    pub se_ratio: f64,
    /// Coverage of nominal 95% intervals.
    pub coverage: f64,
}

impl From<&GammaSummary> for GammaSection {
    fn from(g: &GammaSummary) -> Self {
        Self {
            mean: g.mean,
            bias: g.bias,
            mc_se: g.mc_se,
            empirical_sd: g.empirical_sd,
            mean_se: g.mean_se,
            se_ratio: g.mean_se / g.empirical_sd,
            coverage: g.coverage,
        }
    }
}

/// Assemble the simulation report.
pub fn simulation_report(scn: &SimScenario, r: &CalibrationReport) -> SimulationReport {
    SimulationReport {
        scenario: ScenarioSection {
            n_pairs: scn.n_pairs,
            seed: scn.seed,
            groups: scn
                .groups
                .iter()
                .map(|g| ScenarioGroupRow { label: g.label.clone(), probability: g.prob, effects: g.effects.to_array() })
                .collect(),
            sigma: std::array::from_fn(|i| std::array::from_fn(|j| scn.sigma[(i, j)])),
        },
        method: r.method.to_string(),
        replicates: r.replicates,
        failures: r.failures,
        contrast: r.contrast,
        truth_gamma: r.truth_gamma,
        truth_pooled_means: r.truth_pooled_means,
        pooled_mean_bias: r.pooled_mean_bias,
        pattern_mixture: GammaSection::from(&r.pattern_mixture),
        pattern_ignoring: r.naive.as_ref().map(GammaSection::from),
        failure_log: r.failure_log.clone(),
    }
}
