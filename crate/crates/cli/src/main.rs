//! `subsysfit`: generate benchmark data, interpolate, estimate and report.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

/// Exit status for a run that used its round budget without converging.
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "subsysfit", version, about = "Kinetic ODE parameter estimation by subsystem decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a bundled benchmark and write noisy observations.
    Generate(GenerateArgs),
    /// Fit a Gaussian process to every series in a data directory.
    Interpolate(InterpolateArgs),
    /// Estimate parameters (decomposed by default).
    Estimate(EstimateArgs),
    /// Tables, error histograms and posterior density plots from a report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory. Defaults to a subdirectory of $SUBFIT_OUT (or the
    /// current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Benchmark name: cascade or grn.
    benchmark: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of observation times (default: the benchmark's own grid).
    #[arg(long)]
    points: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    /// Directory of observation CSVs.
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Dense grid points per observation of the longest series.
    #[arg(long, default_value_t = 10)]
    grid_factor: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Bundled benchmark name or path to a model file.
    model: String,
    /// JSON config file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of observation CSVs. Without it a bundled benchmark is
    /// simulated with --noise and --points.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    /// Proposal std as a fraction of each parameter's box width.
    #[arg(long)]
    proposal_fraction: Option<f64>,
    #[arg(long)]
    grid_factor: Option<usize>,
    #[arg(long)]
    gp_restarts: Option<usize>,
    #[arg(long)]
    credible_mass: Option<f64>,
    /// One chain over all parameters instead of per-subsystem chains.
    #[arg(long)]
    whole_system: bool,
    /// Total likelihood evaluations for --whole-system (default: one
    /// decomposed round's worth).
    #[arg(long)]
    budget: Option<u64>,
    /// Score simulations against raw observations instead of GP means.
    #[arg(long)]
    raw_data_likelihood: bool,
    /// Comma-separated species forming one subsystem; repeat per group.
    #[arg(long = "group")]
    groups: Vec<String>,
    #[command(flatten)]
    out: OutArg,
}

impl EstimateArgs {
    fn flags(&self) -> FileConfig {
        FileConfig {
            seed: self.seed,
            workers: self.workers,
            rounds: self.rounds,
            tol: self.tol,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            proposal_fraction: self.proposal_fraction,
            grid_factor: self.grid_factor,
            gp_restarts: self.gp_restarts,
            credible_mass: self.credible_mass,
            noise: self.noise,
            points: self.points,
            data: self.data.clone(),
            whole_system: self.whole_system.then_some(true),
            raw_data_likelihood: self.raw_data_likelihood.then_some(true),
            budget: self.budget,
            grouping: (!self.groups.is_empty()).then(|| {
                self.groups
                    .iter()
                    .map(|g| g.split(',').map(|s| s.trim().to_string()).collect())
                    .collect()
            }),
            out: self.out.out.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Estimation report JSON. Omit with --reference.
    report: Option<PathBuf>,
    /// Directory of per-subsystem sample dumps (default: `samples` next to
    /// the report).
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Relative errors above this are left out of the histogram.
    #[arg(long, default_value_t = subsysfit::summary::DEFAULT_EXCLUSION)]
    threshold: f64,
    /// Summarize the bundled published error table instead of a report.
    #[arg(long)]
    reference: bool,
    #[command(flatten)]
    out: OutArg,
}

pub enum Outcome {
    Done,
    NotConverged,
}

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a.benchmark, a.noise, a.seed, a.points, a.out.out),
        Command::Interpolate(a) => commands::interpolate(&a.data, a.seed, a.restarts, a.grid_factor, a.out.out),
        Command::Estimate(a) => {
            let file = match &a.config {
                Some(p) => match FileConfig::load(p) {
                    Ok(f) => f,
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        return ExitCode::from(EXIT_USAGE);
                    }
                },
                None => FileConfig::default(),
            };
            commands::estimate(&a.model, file.overlay(a.flags()))
        }
        Command::Report(a) => {
            if a.reference {
                commands::reference(a.threshold)
            } else {
                match a.report {
                    Some(r) => commands::report(&r, a.samples, a.threshold, a.out.out),
                    None => Err(Failure::Usage("a report path or --reference is required".into())),
                }
            }
        }
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
