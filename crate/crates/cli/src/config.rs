//! Run configuration from a TOML file, with command-line overrides.
//!
//! ```toml
//! input = "pairs.csv"
//! method = "reml"
//! contrast = [1.0, -1.0, -1.0, 1.0]
//!
//! [grouping]
//! scheme = "merged-dp"
//!
//! [optimizer]
//! max_iter = 300
//!
//! [labels]
//! type_1 = "R"
//! type_2 = "G"
//! treatment_a = "Albuterol"
//! treatment_b = "Placebo"
//! ```
//!
//! A grouping may instead name a file, or list groups explicitly:
//!
//! ```toml
//! [[grouping.group]]
//! label = "C"
//! patterns = [0, 10, 11, 12]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use crossmix_core::estimation::Init;
use crossmix_core::simulate::{default_sigma, PatternCell, ScenarioGroup};
use crossmix_core::{
    interaction_contrast, FitOptions, GroupEffects, GroupingScheme, MeanModel, Method, PatternId, Sequence,
    SimScenario,
};
use nalgebra::Matrix4;
use serde::Deserialize;

/// File contents; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Data file.
    pub input: Option<PathBuf>,
    /// Report path; standard output when absent.
    pub out: Option<PathBuf>,
    /// `ml` or `reml`.
    pub method: Option<String>,
    /// Single-group, pattern-ignoring analysis.
    pub naive: Option<bool>,
    /// Contrast over (1A, 1B, 2A, 2B).
    pub contrast: Option<[f64; 4]>,
    /// Master seed for simulation.
    pub seed: Option<u64>,
    /// Monte Carlo replicates.
    pub reps: Option<usize>,
    /// Worker threads for simulation.
    pub threads: Option<usize>,
    /// Include the optimizer trace in fit reports.
    pub trace: Option<bool>,
    /// Pattern grouping.
    pub grouping: Option<GroupingConfig>,
    /// Optimizer settings.
    pub optimizer: Option<OptimizerConfig>,
    /// Display names.
    pub labels: Option<Labels>,
    /// Simulation truth.
    pub scenario: Option<ScenarioConfig>,
}

/// Grouping by name, file or explicit list.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    /// `default` or `merged-dp`.
    pub scheme: Option<String>,
    /// Another TOML file holding a grouping table.
    pub file: Option<PathBuf>,
    /// Explicit groups.
    #[serde(default)]
    pub group: Vec<GroupEntry>,
    /// Pairs below which a group is reported as sparse.
    pub min_pairs: Option<usize>,
}

/// One explicit group.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    /// Group label.
    pub label: String,
    /// Member patterns.
    pub patterns: Vec<u8>,
}

/// Optimizer overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iteration cap.
    pub max_iter: Option<usize>,
    /// Scaled gradient tolerance.
    pub grad_tol: Option<f64>,
    /// Relative step tolerance.
    pub step_tol: Option<f64>,
    /// Relative objective tolerance.
    pub obj_tol: Option<f64>,
}

/// Display names for subject types and treatments.
#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Labels {
    /// Subject type 1.
    pub type_1: String,
    /// Subject type 2.
    pub type_2: String,
    /// Treatment A.
    pub treatment_a: String,
    /// Treatment B.
    pub treatment_b: String,
}

impl Default for Labels {
    fn default() -> Self {
        Self { type_1: "1".into(), type_2: "2".into(), treatment_a: "A".into(), treatment_b: "B".into() }
    }
}

impl Labels {
    /// Display name of cell `k` in (1A, 1B, 2A, 2B) order.
    pub fn cell(&self, k: usize) -> String {
        let t = if k < 2 { &self.type_1 } else { &self.type_2 };
        let a = if k % 2 == 0 { &self.treatment_a } else { &self.treatment_b };
        if t.chars().count() == 1 && a.chars().count() == 1 {
            format!("{t}{a}")
        } else {
            format!("{t} {a}")
        }
    }
}

/// Simulation truth: a preset, optionally adjusted, or a full specification.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `barge-like`, `non-ignorable` or `custom`.
    pub preset: Option<String>,
    /// Shift of the D+P type 2 / treatment B mean for `non-ignorable`.
    pub shift: Option<f64>,
    /// Pairs per replicate.
    pub n_pairs: Option<usize>,
    /// Complete-data covariance, row by row.
    pub sigma: Option<[[f64; 4]; 4]>,
    /// Groups for `custom`, in grouping order.
    #[serde(default)]
    pub group: Vec<ScenarioGroupConfig>,
}

/// One group of a custom scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGroupConfig {
    /// Label matching the grouping.
    pub label: String,
    /// Group probability.
    pub prob: f64,
    /// Effects in (μ_1A, μ_1B, μ_2A, μ_2B, ρ_1, ρ_2, ν_1, ν_2) order.
    pub effects: [f64; 8],
    /// Pattern and sequence probabilities within the group.
    pub cell: Vec<CellConfig>,
}

/// One (pattern, sequence) cell of a custom scenario group.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Pattern 0–14.
    pub pattern: u8,
    /// Sequence 1 (AB) or 2 (BA).
    pub sequence: u8,
    /// Probability within the group.
    pub prob: f64,
}

impl RunConfig {
    /// Read and parse a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Parse `ml` / `reml`, case-insensitively.
pub fn parse_method(s: &str) -> Result<Method> {
    match s.to_ascii_lowercase().as_str() {
        "ml" => Ok(Method::Ml),
        "reml" => Ok(Method::Reml),
        other => bail!("unknown method `{other}` (expected ml or reml)"),
    }
}

/// Parse `a,b,c,d`.
pub fn parse_contrast(s: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("contrast needs four comma-separated numbers, got `{s}`");
    }
    let mut c = [0.0f64; 4];
    for (slot, p) in c.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| anyhow!("contrast entry `{p}` is not a number"))?;
        if !slot.is_finite() {
            bail!("contrast entry `{p}` is not finite");
        }
    }
    Ok(c)
}

fn file_grouping(path: &Path) -> Result<GroupingConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading grouping {}", path.display()))?;
    let g: GroupingConfig = toml::from_str(&text).with_context(|| format!("parsing grouping {}", path.display()))?;
    if g.file.is_some() {
        bail!("grouping file {} may not refer to another file", path.display());
    }
    Ok(g)
}

/// Build a scheme from a grouping table. Relative file paths are taken from
/// `base`.
pub fn resolve_grouping(g: &GroupingConfig, base: &Path) -> Result<GroupingScheme> {
    let sources = g.scheme.is_some() as u8 + g.file.is_some() as u8 + (!g.group.is_empty()) as u8;
    if sources > 1 {
        bail!("grouping: give only one of scheme, file or group entries");
    }
    let min_pairs = g.min_pairs.unwrap_or(GroupingScheme::DEFAULT_MIN_PAIRS);
    let scheme = if let Some(file) = &g.file {
        let inner = file_grouping(&base.join(file))?;
        let mut s = resolve_grouping(&inner, base)?;
        if g.min_pairs.is_some() {
            s.min_pairs_per_group = min_pairs;
        }
        return Ok(s);
    } else if !g.group.is_empty() {
        let groups: Vec<(&str, &[u8])> = g.group.iter().map(|e| (e.label.as_str(), e.patterns.as_slice())).collect();
        GroupingScheme::from_groups(&groups, min_pairs)?
    } else {
        let mut s = named_scheme(g.scheme.as_deref().unwrap_or("default"))?;
        s.min_pairs_per_group = min_pairs;
        s
    };
    Ok(scheme)
}

/// `default` or `merged-dp`.
pub fn named_scheme(name: &str) -> Result<GroupingScheme> {
    match name {
        "default" => Ok(GroupingScheme::completers_dropout_pair()),
        "merged-dp" => Ok(GroupingScheme::merged_dp()),
        other => bail!("unknown grouping scheme `{other}` (expected default or merged-dp)"),
    }
}

/// Interpret a `--grouping` value: a scheme name or a grouping file.
pub fn grouping_from_flag(value: &str) -> Result<GroupingScheme> {
    match value {
        "default" | "merged-dp" => named_scheme(value),
        path => {
            let g = file_grouping(Path::new(path))?;
            let base = Path::new(path).parent().unwrap_or(Path::new("."));
            resolve_grouping(&g, base)
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `--input`.
    pub input: Option<PathBuf>,
    /// `--out`.
    pub out: Option<PathBuf>,
    /// `--method`.
    pub method: Option<String>,
    /// `--grouping`.
    pub grouping: Option<String>,
    /// `--naive`.
    pub naive: bool,
    /// `--contrast`.
    pub contrast: Option<String>,
    /// `--seed`.
    pub seed: Option<u64>,
    /// `--reps`.
    pub reps: Option<usize>,
    /// `--threads`.
    pub threads: Option<usize>,
    /// `--trace`.
    pub trace: bool,
    /// `--scenario`.
    pub scenario: Option<String>,
    /// `--shift`.
    pub shift: Option<f64>,
    /// `--n-pairs`.
    pub n_pairs: Option<usize>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    /// Data file.
    pub input: Option<PathBuf>,
    /// Report destination.
    pub out: Option<PathBuf>,
    /// Fitting options.
    pub fit: FitOptions,
    /// Grouping.
    pub scheme: GroupingScheme,
    /// Pattern-ignoring analysis.
    pub naive: bool,
    /// Contrast.
    pub contrast: [f64; 4],
    /// Master seed.
    pub seed: u64,
    /// Replicates.
    pub reps: usize,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    /// Emit the optimizer trace.
    pub trace: bool,
    /// Display names.
    pub labels: Labels,
    /// Scenario table, if any.
    pub scenario: ScenarioConfig,
}

/// Default master seed.
pub const DEFAULT_SEED: u64 = 20240101;
/// Default replicate count.
pub const DEFAULT_REPS: usize = 100;

impl Settings {
    /// Merge `file` (if any) and `flags`; flags win.
    pub fn resolve(file: Option<(&RunConfig, &Path)>, flags: &Overrides) -> Result<Self> {
        let empty = RunConfig::default();
        let (cfg, base) = file.unwrap_or((&empty, Path::new(".")));
        let rel = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));

        let method = match flags.method.as_deref().or(cfg.method.as_deref()) {
            Some(m) => parse_method(m)?,
            None => Method::Reml,
        };
        let opt = cfg.optimizer.clone().unwrap_or_default();
        let defaults = FitOptions::default();
        let fit = FitOptions {
            method,
            max_iter: opt.max_iter.unwrap_or(defaults.max_iter),
            grad_tol: opt.grad_tol.unwrap_or(defaults.grad_tol),
            step_tol: opt.step_tol.unwrap_or(defaults.step_tol),
            obj_tol: opt.obj_tol.unwrap_or(defaults.obj_tol),
            init: Init::MomentStart,
            mean_model: MeanModel::Crossover,
        };
        fit.validate()?;

        let scheme = match (&flags.grouping, &cfg.grouping) {
            (Some(flag), _) => grouping_from_flag(flag)?,
            (None, Some(g)) => resolve_grouping(g, base)?,
            (None, None) => GroupingScheme::default(),
        };
        let contrast = match &flags.contrast {
            Some(c) => parse_contrast(c)?,
            None => cfg.contrast.unwrap_or_else(interaction_contrast),
        };
        if contrast.iter().any(|c| !c.is_finite()) {
            bail!("contrast entries must be finite");
        }

        let mut scenario = cfg.scenario.clone().unwrap_or_default();
        if let Some(p) = &flags.scenario {
            scenario.preset = Some(p.clone());
        }
        if flags.shift.is_some() {
            scenario.shift = flags.shift;
        }
        if flags.n_pairs.is_some() {
            scenario.n_pairs = flags.n_pairs;
        }

        let reps = flags.reps.or(cfg.reps).unwrap_or(DEFAULT_REPS);
        if reps == 0 {
            bail!("reps must be at least 1");
        }
        let threads = flags.threads.or(cfg.threads);
        if threads == Some(0) {
            bail!("threads must be at least 1");
        }

        Ok(Self {
            input: flags.input.clone().or_else(|| rel(&cfg.input)),
            out: flags.out.clone().or_else(|| rel(&cfg.out)),
            fit,
            scheme,
            naive: flags.naive || cfg.naive.unwrap_or(false),
            contrast,
            seed: flags.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
            reps,
            threads,
            trace: flags.trace || cfg.trace.unwrap_or(false),
            labels: cfg.labels.clone().unwrap_or_default(),
            scenario,
        })
    }

    /// The simulation truth described by the scenario table.
    pub fn build_scenario(&self) -> Result<SimScenario> {
        let sc = &self.scenario;
        let preset = sc.preset.as_deref().unwrap_or("barge-like");
        let mut scn = match preset {
            "barge-like" => SimScenario::barge_like(self.seed),
            "non-ignorable" => SimScenario::non_ignorable(sc.shift.unwrap_or(40.0), self.seed),
            "custom" => custom_scenario(sc, &self.scheme, self.seed)?,
            other => bail!("unknown scenario preset `{other}` (expected barge-like, non-ignorable or custom)"),
        };
        if preset != "non-ignorable" && sc.shift.is_some() {
            bail!("shift applies only to the non-ignorable preset");
        }
        if preset != "custom" && !sc.group.is_empty() {
            bail!("scenario groups require preset = \"custom\"");
        }
        if let Some(n) = sc.n_pairs {
            scn.n_pairs = n;
        }
        if let Some(s) = sc.sigma {
            scn.sigma = Matrix4::from_fn(|i, j| s[i][j]);
        }
        scn.validate()?;
        Ok(scn)
    }
}

fn custom_scenario(sc: &ScenarioConfig, scheme: &GroupingScheme, seed: u64) -> Result<SimScenario> {
    if sc.group.is_empty() {
        bail!("custom scenario needs [[scenario.group]] entries");
    }
    let mut groups = Vec::new();
    for g in &sc.group {
        let mut cells = Vec::new();
        for c in &g.cell {
            cells.push(PatternCell {
                pattern: PatternId::new(c.pattern)?,
                sequence: Sequence::from_number(c.sequence)?,
                prob: c.prob,
            });
        }
        groups.push(ScenarioGroup {
            label: g.label.clone(),
            prob: g.prob,
            effects: GroupEffects::from_array(g.effects),
            cells,
        });
    }
    Ok(SimScenario { scheme: scheme.clone(), groups, sigma: default_sigma(), n_pairs: 200, seed })
}
