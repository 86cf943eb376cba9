//! Reproducible experiment drivers. Each driver returns typed results so it
//! can be checked in tests; [`run_experiment`] adds artifact writing.

pub mod autoencode;
pub mod mnist;
pub mod output;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cli::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::data::{load_mnist_dir, DataError, Dataset, Split};
use crate::diagnostics::{fisher_check, gradcheck};
use crate::error::PcnError;
pub use output::OutputDir;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] PcnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for everything found while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Final metrics of one run. Wall time is kept out of the serialized form so
/// that reruns produce identical `summary.json` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ExperimentSummary {
    /// `name seed=.. hash=.. k=v .. wall=..s`
    pub fn one_line(&self) -> String {
        let mut line = format!(
            "{} seed={} hash={}",
            self.name,
            self.seed,
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        for (k, v) in &self.metrics {
            if *v != 0.0 && v.abs() < 1e-3 {
                line.push_str(&format!(" {k}={v:.3e}"));
            } else {
                line.push_str(&format!(" {k}={v:.6}"));
            }
        }
        line.push_str(&format!(" wall={:.1}s", self.wall_time_secs));
        line
    }
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset, ExperimentError> {
    let dir = cfg
        .mnist_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    Ok(load_mnist_dir(&dir, split)?)
}

/// Writes the resolved config, runs the experiment, writes its artifacts plus
/// `summary.json` and `timing.json` under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let out = OutputDir::create(&cfg.out_dir, cfg.format)?;
    out.write_text("config.json", &(cfg.to_json_pretty() + "\n"))?;

    let metrics = match cfg.experiment {
        ExperimentKind::VarianceEstimation => {
            let result = synthetic::variance_estimation(cfg)?;
            result.write(&out)?;
            result.metrics()
        }
        ExperimentKind::WeightsLearning => {
            let result = synthetic::weights_learning(cfg)?;
            result.write(&out)?;
            result.metrics()
        }
        ExperimentKind::MnistClassify => {
            let (train, test) = (load_split(cfg, Split::Train)?, load_split(cfg, Split::Test)?);
            let result = mnist::classify(cfg, &train, &test)?;
            result.write(&out)?;
            result.metrics()
        }
        ExperimentKind::MnistReconstruct => {
            let (train, test) = (load_split(cfg, Split::Train)?, load_split(cfg, Split::Test)?);
            let result = mnist::reconstruct(cfg, &train, &test)?;
            result.write(&out)?;
            result.metrics()
        }
        ExperimentKind::Autoencode => {
            let (train, test) = (load_split(cfg, Split::Train)?, load_split(cfg, Split::Test)?);
            let result = autoencode::autoencode(cfg, &train, &test)?;
            result.write(&out)?;
            result.metrics()
        }
        ExperimentKind::FisherCheck => {
            let checks = fisher_check(cfg.seed, cfg.run.fisher_samples)?;
            out.write_json("fisher_checks.json", &checks)?;
            let mut m: BTreeMap<String, f64> = checks
                .iter()
                .map(|c| (format!("relative_error_{}", c.name), c.relative_error))
                .collect();
            let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
            m.insert("max_relative_error".into(), worst);
            m
        }
        ExperimentKind::Gradcheck => {
            let report = gradcheck(cfg.seed, cfg.run.networks)?;
            out.write_json("gradcheck.json", &report)?;
            BTreeMap::from([
                ("max_relative_error".to_string(), report.max_relative_error),
                ("parameters".to_string(), report.parameters as f64),
                ("networks".to_string(), report.networks as f64),
            ])
        }
    };

    let summary = ExperimentSummary {
        name: cfg.experiment.name().to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    out.write_json("summary.json", &summary)?;
    out.write_json(
        "timing.json",
        &BTreeMap::from([("wall_time_secs", summary.wall_time_secs)]),
    )?;
    Ok(summary)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero for fewer than two
/// values.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
