//! Subcommand implementations, independent of argument parsing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crossmix_core::simulate::{run_replicate, simulate_replicate, summarize, CalibrationOptions, ReplicateOutcome};
use crossmix_core::{delta_variance, fit, pooled_means, GroupingScheme, PatternId, Sequence, SimScenario};

use crate::config::{Labels, Settings};
use crate::data::{parse_csv, write_csv, Dataset};
use crate::report::{fit_report, mask_string, simulation_report, FitInputs, FitReport, SimulationReport};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    /// Success.
    Ok = 0,
    /// Bad input, configuration or data.
    InputError = 1,
    /// The optimizer stopped short of convergence.
    NonConvergence = 2,
}

/// Label of the single group in a pattern-ignoring analysis.
pub const NAIVE_LABEL: &str = "all";

/// Read the configured input and refuse files with malformed rows.
pub fn load_data(settings: &Settings) -> Result<Dataset> {
    let Some(path) = &settings.input else { bail!("no input file given (use --input or `input` in the config)") };
    let data = parse_csv(path)?;
    let malformed: Vec<String> = data.malformed().map(ToString::to_string).collect();
    if !malformed.is_empty() {
        bail!("{} malformed row(s) in {}:\n  {}", malformed.len(), data.source, malformed.join("\n  "));
    }
    if data.records.is_empty() {
        bail!("{} has no usable records", data.source);
    }
    Ok(data)
}

/// Scheme used for estimation.
pub fn analysis_scheme(settings: &Settings) -> Result<GroupingScheme> {
    if settings.naive {
        let mut s = GroupingScheme::single(NAIVE_LABEL);
        s.min_pairs_per_group = settings.scheme.min_pairs_per_group;
        Ok(s)
    } else {
        Ok(settings.scheme.clone())
    }
}

/// Fit `data` and build the report.
pub fn fit_dataset(data: &Dataset, settings: &Settings) -> Result<FitReport> {
    let scheme = analysis_scheme(settings)?;
    let fitted = fit(&data.records, &scheme, &settings.fit).context("fitting the model")?;
    let pooled = pooled_means(&fitted);
    let contrast = delta_variance(&fitted, settings.contrast).map_err(|e| e.to_string());
    Ok(fit_report(FitInputs {
        data,
        scheme: &scheme,
        fit: &fitted,
        pooled: &pooled,
        contrast,
        naive: settings.naive,
        trace: settings.trace,
        labels: &settings.labels,
    }))
}

/// `fit`: report and exit status.
pub fn run_fit(settings: &Settings) -> Result<(FitReport, ExitCode)> {
    let data = load_data(settings)?;
    let report = fit_dataset(&data, settings)?;
    let code = if report.convergence.converged { ExitCode::Ok } else { ExitCode::NonConvergence };
    Ok((report, code))
}

/// Replicate outcomes in replicate order, on `threads` workers.
pub fn run_replicates(
    scn: &SimScenario,
    reps: usize,
    opts: &CalibrationOptions,
    threads: Option<usize>,
) -> Result<Vec<ReplicateOutcome>> {
    let work = || (0..reps as u64).into_par_iter().map(|r| run_replicate(scn, r, opts)).collect::<Vec<_>>();
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work)),
        None => Ok(work()),
    }
}

/// `simulate`: Monte Carlo calibration of the configured scenario.
pub fn run_simulate(settings: &Settings, emit_dataset: Option<&Path>) -> Result<SimulationReport> {
    let scn = settings.build_scenario()?;
    if let Some(path) = emit_dataset {
        let records = simulate_replicate(&scn, 0)?;
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(&records, file)?;
    }
    let opts = CalibrationOptions { fit: settings.fit, contrast: settings.contrast, compare_naive: settings.naive };
    let outcomes = run_replicates(&scn, settings.reps, &opts, settings.threads)?;
    let summary = summarize(&scn, &opts, &outcomes);
    Ok(simulation_report(&scn, &summary))
}

/// `patterns`: the fifteen-pattern taxonomy under `scheme`.
pub fn patterns_table(scheme: &GroupingScheme, labels: &Labels) -> String {
    let mut out = String::new();
    let positions = (0..4).map(|k| labels.cell(k)).collect::<Vec<_>>().join(" ");
    let ab = format!("AB observed ({positions})");
    let ba = format!("BA observed ({positions})");
    let mask = "mask (s1p1 s1p2 s2p1 s2p2)";
    let (wm, wa, wb) = (mask.len(), ab.chars().count(), ba.chars().count());
    let _ = writeln!(out, "{:<7}  {mask:<wm$}  {ab:<wa$}  {ba:<wb$}  {:<8}  group", "pattern", "monotone");
    for p in PatternId::all() {
        let observed = |s: Sequence| mask_string(p.mask(s).observed());
        let _ = writeln!(
            out,
            "{:<7}  {:<wm$}  {:<wa$}  {:<wb$}  {:<8}  {}",
            p.value(),
            mask_string(p.period_layout()),
            observed(Sequence::AB),
            observed(Sequence::BA),
            if p.is_monotone_within_subject() { "yes" } else { "no" },
            scheme.label(scheme.group_of(p))
        );
    }
    out
}

/// `validate`: summary text and status. Any rejected row is an error.
pub fn run_validate(settings: &Settings) -> Result<(String, ExitCode)> {
    let Some(path) = &settings.input else { bail!("no input file given (use --input or `input` in the config)") };
    let data = parse_csv(path)?;
    let scheme = &settings.scheme;
    let counts = crossmix_core::patterns::tabulate(&data.records, scheme);
    let mut out = String::new();
    let _ = writeln!(out, "source: {}", data.source);
    let _ = writeln!(out, "rows: {}  accepted: {}  rejected: {}", data.rows, data.records.len(), data.rejected.len());
    for r in &data.rejected {
        let _ = writeln!(out, "  rejected {r}");
    }
    let _ = writeln!(out, "pairs by sequence: AB {}  BA {}", counts.by_sequence[0], counts.by_sequence[1]);
    for p in PatternId::all() {
        let [a, b] = counts.by_pattern[p.index()];
        if a + b > 0 {
            let _ = writeln!(out, "  pattern {:>2}: {:>5} (AB {a}, BA {b})  group {}", p.value(), a + b, scheme.label(scheme.group_of(p)));
        }
    }
    for g in 0..scheme.n_groups() {
        let n = counts.by_group[g];
        let note = if n == 0 {
            "  (empty)"
        } else if n < scheme.min_pairs_per_group {
            "  (sparse)"
        } else {
            ""
        };
        let _ = writeln!(out, "group {}: {n}{note}", scheme.label(g));
    }
    let code = if data.rejected.is_empty() && !data.records.is_empty() { ExitCode::Ok } else { ExitCode::InputError };
    Ok((out, code))
}
