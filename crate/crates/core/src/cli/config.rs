use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::NoiseSpec;
use crate::pc_core::Activation;
use crate::train::{Preconditioner, Schedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

impl ConfigError {
    fn field(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VarianceEstimation,
    WeightsLearning,
    MnistClassify,
    MnistReconstruct,
    Autoencode,
    FisherCheck,
    Gradcheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::VarianceEstimation,
        ExperimentKind::WeightsLearning,
        ExperimentKind::MnistClassify,
        ExperimentKind::MnistReconstruct,
        ExperimentKind::Autoencode,
        ExperimentKind::FisherCheck,
        ExperimentKind::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VarianceEstimation => "variance-estimation",
            ExperimentKind::WeightsLearning => "weights-learning",
            ExperimentKind::MnistClassify => "mnist-classify",
            ExperimentKind::MnistReconstruct => "mnist-reconstruct",
            ExperimentKind::Autoencode => "autoencode",
            ExperimentKind::FisherCheck => "fisher-check",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn needs_mnist(self) -> bool {
        matches!(
            self,
            ExperimentKind::MnistClassify | ExperimentKind::MnistReconstruct | ExperimentKind::Autoencode
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Layer widths, bottom (observations) first.
    pub widths: Vec<usize>,
    /// Nonlinearity of each top-down prediction; one fewer than `widths`.
    pub activations: Vec<Activation>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adadelta,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Experiment-specific knobs. Fields an experiment does not use are ignored
/// by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    /// Independent repetitions (synthetic experiments).
    pub seeds: usize,
    /// Observations presented per repetition (synthetic experiments).
    pub steps: usize,
    /// Trailing steps averaged into final metrics.
    pub tail: usize,
    /// Activity iterations used to settle a posterior before variance
    /// estimation.
    pub settle_iterations: usize,
    pub signal_mean: f64,
    pub target_mean: f64,
    pub epochs: usize,
    /// Training images used per epoch; `None` for the full set.
    pub train_samples: Option<usize>,
    /// Test images evaluated; `None` for the full set.
    pub test_samples: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Activity iterations when classifying or embedding a test image.
    pub test_iterations: usize,
    /// Learning-rate multiplier for Adadelta steps.
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub knn_k: usize,
    /// Reconstructed images written as PGM.
    pub image_dumps: usize,
    pub fisher_samples: usize,
    pub networks: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seeds: 1,
            steps: 100,
            tail: 50,
            settle_iterations: 50,
            signal_mean: 0.0,
            target_mean: 0.0,
            epochs: 1,
            train_samples: None,
            test_samples: None,
            optimizer: OptimizerKind::Sgd,
            test_iterations: 100,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            knn_k: 5,
            image_dumps: 10,
            fisher_samples: 100_000,
            networks: 100,
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub architecture: Architecture,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub mnist_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub run: RunSettings,
}

impl ExperimentConfig {
    /// Defaults for `kind`, before any file or flag overrides.
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        use Activation::{Identity, Tanh};
        let mut cfg = ExperimentConfig {
            experiment: kind,
            seed: 0,
            architecture: Architecture {
                widths: vec![1, 1],
                activations: vec![Identity],
            },
            schedule: Schedule::default(),
            noise: NoiseSpec::default(),
            mnist_dir: None,
            out_dir: PathBuf::from("runs").join(kind.name()),
            format: OutputFormat::Csv,
            run: RunSettings::default(),
        };
        match kind {
            ExperimentKind::VarianceEstimation => {
                cfg.architecture = Architecture {
                    widths: vec![16, 8, 4],
                    activations: vec![Tanh, Tanh],
                };
                cfg.noise.input_noise_var = 10.0;
                cfg.noise.prediction_dropout = 0.3;
                cfg.run.seeds = 10;
                cfg.run.steps = 100;
                cfg.run.tail = 50;
            }
            ExperimentKind::WeightsLearning => {
                cfg.noise.input_noise_var = 2.0;
                cfg.noise.target_noise_var = 2.0;
                cfg.schedule.t_activity = 0;
                cfg.run.seeds = 20;
                cfg.run.steps = 3000;
                cfg.run.tail = 1000;
                cfg.run.signal_mean = 5.0;
                cfg.run.target_mean = 2.5;
            }
            ExperimentKind::MnistClassify => {
                cfg.architecture = Architecture {
                    widths: vec![784, 256, 10],
                    activations: vec![Tanh, Tanh],
                };
                cfg.schedule.preconditioner = Preconditioner::Natural;
                cfg.schedule.sigma_floor = 0.1;
                cfg.noise.prediction_dropout = 0.3;
                cfg.run.epochs = 1;
                cfg.run.test_iterations = 30;
            }
            ExperimentKind::MnistReconstruct => {
                cfg.architecture = Architecture {
                    widths: vec![784, 256, 10],
                    activations: vec![Tanh, Tanh],
                };
                cfg.schedule.preconditioner = Preconditioner::Natural;
                cfg.schedule.sigma_floor = 1e-3;
                cfg.run.epochs = 1;
            }
            ExperimentKind::Autoencode => {
                cfg.architecture = Architecture {
                    widths: vec![784, 256, 32],
                    activations: vec![Tanh, Tanh],
                };
                cfg.schedule.preconditioner = Preconditioner::Natural;
                cfg.schedule.sigma_floor = 1e-3;
                cfg.run.epochs = 10;
            }
            ExperimentKind::FisherCheck => {}
            ExperimentKind::Gradcheck => {}
        }
        cfg
    }

    /// Builds the config for `kind`: defaults, then `file` (a JSON object),
    /// then `overrides` (already-structured JSON patches, applied in order).
    pub fn resolve(
        kind: ExperimentKind,
        file: Option<Value>,
        overrides: &[Value],
    ) -> Result<Self, ConfigError> {
        let mut value =
            serde_json::to_value(Self::defaults_for(kind)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(file) = file {
            if !file.is_object() {
                return Err(ConfigError::Parse("config file must hold a JSON object".into()));
            }
            if let Some(name) = file.get("experiment") {
                if name != &Value::String(kind.name().to_string()) {
                    return Err(ConfigError::field(
                        "experiment",
                        format!("config is for {name}, but `{}` was requested", kind.name()),
                    ));
                }
            }
            merge(&mut value, file);
        }
        for patch in overrides {
            merge(&mut value, patch.clone());
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let arch = &self.architecture;
        if arch.widths.len() < 2 {
            return Err(ConfigError::field("architecture.widths", "need at least 2 layers"));
        }
        if arch.widths.contains(&0) {
            return Err(ConfigError::field("architecture.widths", "widths must be positive"));
        }
        if arch.activations.len() + 1 != arch.widths.len() {
            return Err(ConfigError::field(
                "architecture.activations",
                format!(
                    "expected {} entries for {} layers, got {}",
                    arch.widths.len() - 1,
                    arch.widths.len(),
                    arch.activations.len()
                ),
            ));
        }
        self.schedule
            .validate()
            .map_err(|e| ConfigError::field("schedule", e.to_string()))?;
        self.noise
            .validate()
            .map_err(|e| ConfigError::field("noise", e.to_string()))?;
        let run = &self.run;
        if run.seeds == 0 {
            return Err(ConfigError::field("run.seeds", "must be at least 1"));
        }
        if run.tail == 0 || run.tail > run.steps.max(1) {
            return Err(ConfigError::field("run.tail", "must lie in 1..=run.steps"));
        }
        if self.experiment.needs_mnist() {
            if arch.widths[0] != 784 {
                return Err(ConfigError::field(
                    "architecture.widths",
                    "MNIST experiments need 784 input units",
                ));
            }
            if matches!(
                self.experiment,
                ExperimentKind::MnistClassify | ExperimentKind::MnistReconstruct
            ) && *arch.widths.last().unwrap() != 10
            {
                return Err(ConfigError::field(
                    "architecture.widths",
                    "label-clamped experiments need a 10-unit top layer",
                ));
            }
            if run.epochs == 0 {
                return Err(ConfigError::field("run.epochs", "must be at least 1"));
            }
        }
        if run.networks == 0 {
            return Err(ConfigError::field("run.networks", "must be at least 1"));
        }
        if run.knn_k == 0 {
            return Err(ConfigError::field("run.knn_k", "must be at least 1"));
        }
        if !(run.adadelta_rho > 0.0 && run.adadelta_rho < 1.0) {
            return Err(ConfigError::field("run.adadelta_rho", "must lie in (0, 1)"));
        }
        if !(run.adadelta_eps > 0.0) {
            return Err(ConfigError::field("run.adadelta_eps", "must be positive"));
        }
        if matches!(self.experiment, ExperimentKind::FisherCheck) && run.fisher_samples < 1000 {
            return Err(ConfigError::field("run.fisher_samples", "must be at least 1000"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Recursive object merge; non-object values in `patch` replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Turns `a.b.c=value` into `{"a":{"b":{"c":value}}}`. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn parse_assignment(text: &str) -> Result<Value, ConfigError> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("expected key=value, got `{text}`")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::Parse(format!("bad key path `{path}`")));
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for key in path.rsplit('.') {
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), value);
        value = Value::Object(obj);
    }
    Ok(value)
}
