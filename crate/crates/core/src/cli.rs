//! The `cemee` command line: argument parsing and the five subcommands.
//!
//! Exit codes: 0 on success, 1 for usage, schema and input errors, 2 when
//! the numerics fail (non-convergence, singular matrices, no eligible pairs).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_json, FitConfig, ValidateConfig};
use crate::estimate::{fit_with_outcome, FitResult};
use crate::harness::{run_experiment, ExperimentPlan};
use crate::panel::{load_panel, save_panel, validate_panel};
use crate::simulate::{generate_scenario, true_direct_effect, true_indirect_effect, true_marginal_effect, ScenarioConfig};
use crate::variance::{covariance, infer, moderation_curve, write_curve_csv, CovarianceResult, InferenceSummary, SmallSample};
use crate::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "cemee", version, about = "Causal excursion effects for clustered micro-randomized trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel from a scenario config.
    Simulate(RunArgs),
    /// Fit one estimator to a panel and write the coefficient table.
    Fit(RunArgs),
    /// Run a replication experiment and write its report.
    Replicate(RunArgs),
    /// Fit a (1, s) moderator model and tabulate the effect over a grid.
    ModerationCurve(RunArgs),
    /// Check a panel CSV against the data model.
    Validate(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config for the subcommand.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master seed; overrides the config's.
    #[arg(long, env = "CEMEE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Plain sandwich even for few clusters.
    #[arg(long)]
    pub no_small_sample_correction: bool,
    /// More logging; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Fit(a)
            | Command::Replicate(a)
            | Command::ModerationCurve(a)
            | Command::Validate(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Replicate(_) => "replicate",
            Command::ModerationCurve(_) => "moderation-curve",
            Command::Validate(_) => "validate",
        }
    }
}

/// A command failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_numerical() { 2 } else { 1 };
        Failure { code, error }
    }
}

/// Parse `argv`, run, and report. Used by the binary.
pub fn main_from<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let args = cli.command.args();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Run one subcommand.
pub fn run(command: &Command) -> std::result::Result<(), Failure> {
    let args = command.args();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()).into());
        }
        // Only the first pool request in a process takes effect; later
        // ones (tests calling `run` repeatedly) keep the existing pool.
        if rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_err() {
            warn!("thread pool already initialised; --jobs {jobs} ignored");
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a, false),
        Command::ModerationCurve(a) => fit(a, true),
        Command::Replicate(a) => replicate(a),
        Command::Validate(a) => validate(a),
    }
    .inspect(|()| info!("{} finished; outputs in {}", command.name(), args.out.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header(command: &str) -> Value {
    json!({ "tool": "cemee", "version": VERSION, "command": command })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn simulate(args: &RunArgs) -> std::result::Result<(), Failure> {
    let mut config: ScenarioConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let panel = generate_scenario(&config)?;
    save_panel(&panel, args.out.join("panel.csv"))?;
    let manifest = merge(
        header("simulate"),
        json!({
            "seed": config.seed,
            "config": config,
            "truth": true_marginal_effect(&config)?,
            "truth_direct": true_direct_effect(&config)?,
            "truth_indirect": true_indirect_effect(&config),
            "panel": "panel.csv",
            "clusters": panel.n_clusters(),
            "individuals": panel.n_individuals(),
        }),
    );
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn coefficient_json(fit: &FitResult, cov: &CovarianceResult, summary: &InferenceSummary) -> Value {
    let beta_cov: Vec<Vec<f64>> = cov.beta.row_iter().map(|r| r.iter().copied().collect()).collect();
    json!({
        "status": "converged",
        "inference": summary,
        "beta_covariance": beta_cov,
        "diagnostics": {
            "iterations": fit.iterations,
            "residual_norm": fit.residual_norm,
            "bread_condition": fit.bread_condition,
            "numerator": fit.numerator,
            "skipped_singletons": fit.skipped_singletons,
            "units": fit.n_units(),
            "df": cov.df,
            "small_sample_corrected": cov.corrected,
        },
    })
}

fn fit(args: &RunArgs, curve: bool) -> std::result::Result<(), Failure> {
    let mut config = FitConfig::load(&args.config)?;
    if args.no_small_sample_correction {
        config.small_sample = SmallSample::Never;
    }
    let grid = if curve {
        let grid = config
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("moderation-curve needs a `grid`".into()))?;
        if config.moderator.dim() != 2 {
            return Err(Error::Config(format!(
                "moderation-curve needs exactly two moderator terms (1, s), config has {}",
                config.moderator.dim()
            ))
            .into());
        }
        Some(grid.points()?)
    } else {
        None
    };
    let command = if curve { "moderation-curve" } else { "fit" };
    let report = header(command);
    let report = merge(report, json!({ "config": config }));
    let panel = load_panel(&config.panel, &config.schema)?;
    let outcome = fit_with_outcome(&panel, &config.moderator, &config.control, &config.options(), &config.outcome)
        .and_then(|fit| {
            let cov = covariance(&fit, config.small_sample)?;
            let summary = infer(&fit, &cov, &config.contrasts, config.xi)?;
            Ok((fit, cov, summary))
        });
    let (fit, cov, summary) = match outcome {
        Ok(v) => v,
        Err(e) => {
            if e.is_numerical() {
                let failed = merge(report, json!({ "status": "failed", "error": e.to_string() }));
                write_json(&args.out.join("fit.json"), &failed)?;
            }
            return Err(e.into());
        }
    };
    summary.save_csv(args.out.join("coefficients.csv"))?;
    write_json(
        &args.out.join("fit.json"),
        &merge(report, coefficient_json(&fit, &cov, &summary)),
    )?;
    if let Some(grid) = grid {
        let points = moderation_curve(&fit, &cov, &grid, config.xi)?;
        let path = args.out.join("curve.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_curve_csv(&points, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn replicate(args: &RunArgs) -> std::result::Result<(), Failure> {
    let mut plan: ExperimentPlan = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if args.no_small_sample_correction {
        plan.small_sample = SmallSample::Never;
    }
    plan.validate()?;
    let report = run_experiment(&plan)?;
    report.save(args.out.join("report.json"), args.out.join("table.csv"))?;
    Ok(())
}

fn validate(args: &RunArgs) -> std::result::Result<(), Failure> {
    let config = ValidateConfig::load(&args.config)?;
    let panel = load_panel(&config.panel, &config.schema)?;
    let report = validate_panel(&panel);
    let messages: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
    let out = merge(
        header("validate"),
        json!({
            "panel": config.panel,
            "valid": report.is_valid(),
            "clusters": panel.n_clusters(),
            "individuals": panel.n_individuals(),
            "violations": messages,
        }),
    );
    write_json(&args.out.join("validation.json"), &out)?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidPanel(messages).into())
    }
}
