//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running (missing data, numerical errors, failed checks).

pub mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::experiments::{run_experiment, ExperimentError, ExperimentSummary};
use config::{parse_assignment, ConfigError, ExperimentConfig, ExperimentKind, OutputFormat};

pub const MNIST_DIR_ENV: &str = "PCN_MNIST_DIR";
/// Pass thresholds for the built-in checks.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const FISHER_TOLERANCE: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(
    name = "pcn",
    version,
    about = "Predictive coding networks with learned precision",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Infer the variance of a noisy constant signal.
    VarianceEstimation(Common),
    /// Learn a scalar weight with and without precision weighting.
    WeightsLearning(Common),
    /// Train on MNIST with labels clamped and classify the test set.
    MnistClassify(Common),
    /// Compare label-only and image-refined MNIST reconstructions.
    MnistReconstruct(Common),
    /// Unsupervised MNIST auto-encoding with latent export.
    Autoencode(Common),
    /// Monte-Carlo vs closed-form Fisher information.
    FisherCheck(Common),
    /// Analytic vs finite-difference gradients on random networks.
    Gradcheck(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Trace format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Directory with the four MNIST IDX files (falls back to $PCN_MNIST_DIR).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Override any config field, e.g. `--set schedule.eta_theta=0.003`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        use ExperimentKind as K;
        match self {
            Command::VarianceEstimation(c) => (K::VarianceEstimation, c),
            Command::WeightsLearning(c) => (K::WeightsLearning, c),
            Command::MnistClassify(c) => (K::MnistClassify, c),
            Command::MnistReconstruct(c) => (K::MnistReconstruct, c),
            Command::Autoencode(c) => (K::Autoencode, c),
            Command::FisherCheck(c) => (K::FisherCheck, c),
            Command::Gradcheck(c) => (K::Gradcheck, c),
        }
    }
}

/// Builds the resolved config: defaults, config file, flags, then the
/// environment fallback for the MNIST directory.
fn resolve(kind: ExperimentKind, common: Common) -> Result<ExperimentConfig, ConfigError> {
    let file = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            Some(
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let mut patches = Vec::new();
    if let Some(seed) = common.seed {
        patches.push(json!({ "seed": seed }));
    }
    if let Some(dir) = &common.out_dir {
        patches.push(json!({ "out_dir": dir }));
    }
    if let Some(format) = &common.format {
        let format: OutputFormat = serde_json::from_value(Value::String(format.clone())).map_err(|_| {
            ConfigError::Field {
                field: "format".into(),
                reason: format!("expected csv or json, got `{format}`"),
            }
        })?;
        patches.push(json!({ "format": format }));
    }
    if let Some(dir) = &common.mnist_dir {
        patches.push(json!({ "mnist_dir": dir }));
    }
    for assignment in &common.set {
        patches.push(parse_assignment(assignment)?);
    }
    let mut cfg = ExperimentConfig::resolve(kind, file, &patches)?;
    if cfg.mnist_dir.is_none() {
        cfg.mnist_dir = std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from);
    }
    Ok(cfg)
}

/// Names the metric that decides whether a diagnostic passed, if any.
fn check_failure(kind: ExperimentKind, summary: &ExperimentSummary) -> Option<String> {
    let worst = summary.metrics.get("max_relative_error").copied();
    let (limit, what) = match kind {
        ExperimentKind::Gradcheck => (GRADCHECK_TOLERANCE, "gradient check"),
        ExperimentKind::FisherCheck => (FISHER_TOLERANCE, "Fisher check"),
        _ => return None,
    };
    match worst {
        Some(e) if e < limit => None,
        Some(e) => Some(format!("{what} failed: max relative error {e:.3e} >= {limit:.0e}")),
        None => Some(format!("{what} produced no error metric")),
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let (kind, common) = cli.command.split();
    let cfg = match resolve(kind, common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            println!("{} out={}", summary.one_line(), cfg.out_dir.display());
            match check_failure(kind, &summary) {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    2
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &ExperimentError) -> i32 {
    e.exit_code()
}
