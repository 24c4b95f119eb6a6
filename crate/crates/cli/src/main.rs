use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crossmix::commands::{patterns_table, run_fit, run_simulate, run_validate, ExitCode};
use crossmix::config::{Overrides, RunConfig, Settings};
use crossmix::json;

#[derive(Parser)]
#[command(name = "crossmix", version, about = "Pattern-mixture analysis of paired 2x2 crossover trials with missing data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV file and write a JSON report.
    Fit(FitArgs),
    /// Run a Monte Carlo calibration study and write a JSON report.
    Simulate(SimArgs),
    /// Print the fifteen missingness patterns and their groups.
    Patterns(CommonArgs),
    /// Check a CSV file and summarize its patterns.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `default`, `merged-dp`, or a grouping file.
    #[arg(long)]
    grouping: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// `ml` or `reml`.
    #[arg(long)]
    method: Option<String>,
    /// Single-group analysis that ignores the patterns.
    #[arg(long)]
    naive: bool,
    /// Contrast coefficients over 1A,1B,2A,2B.
    #[arg(long, allow_hyphen_values = true)]
    contrast: Option<String>,
    /// Report path; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Include the optimizer trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// `barge-like`, `non-ignorable` or `custom`.
    #[arg(long)]
    scenario: Option<String>,
    /// Shift of the D+P type 2 / treatment B mean (non-ignorable scenario).
    #[arg(long, allow_hyphen_values = true)]
    shift: Option<f64>,
    /// Pairs per replicate.
    #[arg(long)]
    n_pairs: Option<usize>,
    /// Also write replicate 0 as CSV.
    #[arg(long)]
    emit_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn settings(common: &CommonArgs, flags: Overrides) -> Result<Settings> {
    let flags = Overrides { grouping: common.grouping.clone(), ..flags };
    match &common.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            Settings::resolve(Some((&cfg, base)), &flags)
        }
        None => Settings::resolve(None, &flags),
    }
}

fn model_overrides(m: &ModelArgs) -> Overrides {
    Overrides {
        method: m.method.clone(),
        naive: m.naive,
        contrast: m.contrast.clone(),
        out: m.out.clone(),
        ..Overrides::default()
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fit(a) => {
            let s = settings(&a.common, Overrides { input: a.input, trace: a.trace, ..model_overrides(&a.model) })?;
            let (report, code) = run_fit(&s)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit(&json::to_string(&report)?, s.out.as_deref())?;
            Ok(code)
        }
        Command::Simulate(a) => {
            let flags = Overrides {
                seed: a.seed,
                reps: a.reps,
                threads: a.threads,
                scenario: a.scenario,
                shift: a.shift,
                n_pairs: a.n_pairs,
                ..model_overrides(&a.model)
            };
            let s = settings(&a.common, flags)?;
            let report = run_simulate(&s, a.emit_dataset.as_deref())?;
            if report.failures > 0 {
                eprintln!("warning: {} of {} replicates excluded", report.failures, report.replicates);
            }
            emit(&json::to_string(&report)?, s.out.as_deref())?;
            Ok(ExitCode::Ok)
        }
        Command::Patterns(a) => {
            let s = settings(&a, Overrides::default())?;
            print!("{}", patterns_table(&s.scheme, &s.labels));
            Ok(ExitCode::Ok)
        }
        Command::Validate(a) => {
            let s = settings(&a.common, Overrides { input: a.input, ..Overrides::default() })?;
            let (text, code) = run_validate(&s)?;
            print!("{text}");
            Ok(code)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::InputError
        }
    };
    process::exit(code as i32);
}
