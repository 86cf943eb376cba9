//! Low-dimensional experiments on synthetic noisy signals.

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;

use super::{mean, std_dev, ExperimentError, OutputDir};
use crate::cli::config::ExperimentConfig;
use crate::data::{add_gaussian_noise, constant_signal_stream, standard_normal, SeedTree};
use crate::error::Result;
use crate::pc_core::PcNetwork;
use crate::precision::{run_variance_estimation, settle_posterior, VarianceMode};
use crate::trace::{series, Quantity, TraceRecord};
use crate::train::{run_inference, Dropout, Schedule, WeightStepper};

fn tail_mean(values: &[f64], tail: usize) -> f64 {
    mean(&values[values.len().saturating_sub(tail)..])
}

/// Per-step average over seeds of traces that share the same layout.
fn average_traces(per_seed: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let Some(first) = per_seed.first() else {
        return Vec::new();
    };
    let n = per_seed.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let total: f64 = per_seed.iter().map(|t| t[i].value).sum();
            TraceRecord::new(r.step, r.layer, r.quantity, total / n)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ModeResult {
    pub mode: VarianceMode,
    pub dropout: f64,
    /// Input-layer variance averaged over the trailing window, one per seed.
    pub sigma_input_per_seed: Vec<f64>,
    pub sigma_input: f64,
    /// Mean variance of every predicted layer per step, averaged over seeds.
    pub trace: Vec<TraceRecord>,
}

#[derive(Clone, Debug)]
pub struct VarianceResult {
    pub modes: Vec<ModeResult>,
}

impl VarianceResult {
    pub fn mode(&self, mode: VarianceMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for r in &self.modes {
            m.insert(format!("sigma_input_{}", r.mode.name()), r.sigma_input);
            m.insert(
                format!("sigma_input_std_{}", r.mode.name()),
                std_dev(&r.sigma_input_per_seed),
            );
        }
        m
    }

    /// `traces.csv` holds the fixed-posterior run; every mode also gets its
    /// own `traces_<mode>` file.
    pub fn write(&self, out: &OutputDir) -> std::result::Result<(), ExperimentError> {
        for r in &self.modes {
            out.write_traces(&format!("traces_{}", r.mode.name()), &r.trace)?;
        }
        if let Some(primary) = self.mode(VarianceMode::FixedPosterior) {
            out.write_traces("traces", &primary.trace)?;
        }
        Ok(())
    }
}

/// Dropout rate used by each estimation mode: sampled predictions only make
/// sense when predictions are held fixed.
fn mode_dropout(mode: VarianceMode, cfg: &ExperimentConfig) -> f64 {
    match mode {
        VarianceMode::FixedPrediction => cfg.noise.prediction_dropout,
        _ => 0.0,
    }
}

/// A network whose hidden layers hold a posterior for the clean signal.
fn settled_network(cfg: &ExperimentConfig, tree: &SeedTree, clean: &Array1<f64>) -> Result<PcNetwork> {
    let arch = &cfg.architecture;
    let mut net = PcNetwork::new(&arch.widths, &arch.activations, &mut tree.stream("init", 0))?;
    let mut latent_rng = tree.stream("latent", 0);
    let top = net.top_index();
    net.layers[top].mu.mapv_inplace(|_| standard_normal(&mut latent_rng));
    net.initialize_top_down()?;
    settle_posterior(&mut net, clean, &cfg.schedule, cfg.run.settle_iterations)?;
    Ok(net)
}

/// Estimates the input variance of a constant signal observed through
/// Gaussian noise, under fixed posteriors, fixed (dropout-sampled)
/// predictions and joint learning.
pub fn variance_estimation(cfg: &ExperimentConfig) -> Result<VarianceResult> {
    let root = SeedTree::new(cfg.seed);
    let width = cfg.architecture.widths[0];
    let clean = Array1::from_elem(width, cfg.run.signal_mean);
    let modes = [
        VarianceMode::FixedPosterior,
        VarianceMode::FixedPrediction,
        VarianceMode::Joint,
    ];

    let per_seed: Vec<Vec<Vec<TraceRecord>>> = (0..cfg.run.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let tree = root.child("seed", s);
            let base = settled_network(cfg, &tree, &clean)?;
            let mut noise_rng = tree.stream("stream", 0);
            let stream: Vec<Array1<f64>> = (0..cfg.run.steps)
                .map(|_| add_gaussian_noise(&clean, cfg.noise.input_noise_var, &mut noise_rng))
                .collect();
            modes
                .iter()
                .enumerate()
                .map(|(k, &mode)| {
                    let mut net = base.clone();
                    let mut rng = tree.stream("dropout", k as u64);
                    run_variance_estimation(
                        &mut net,
                        &stream,
                        mode,
                        cfg.run.steps,
                        &cfg.schedule,
                        mode_dropout(mode, cfg),
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let results = modes
        .iter()
        .enumerate()
        .map(|(k, &mode)| {
            let traces: Vec<Vec<TraceRecord>> = per_seed.iter().map(|s| s[k].clone()).collect();
            let sigma_input_per_seed: Vec<f64> = traces
                .iter()
                .map(|t| tail_mean(&series(t, 0, Quantity::Sigma), cfg.run.tail))
                .collect();
            ModeResult {
                mode,
                dropout: mode_dropout(mode, cfg),
                sigma_input: mean(&sigma_input_per_seed),
                sigma_input_per_seed,
                trace: average_traces(&traces),
            }
        })
        .collect();
    Ok(VarianceResult { modes: results })
}

#[derive(Clone, Debug)]
pub struct ConditionResult {
    pub target_noise_var: f64,
    pub precision: bool,
    /// Weight after the last step, one per seed.
    pub theta_final: Vec<f64>,
    /// Weight averaged over the trailing window, one per seed.
    pub theta_tail: Vec<f64>,
    /// Input variance averaged over the trailing window, one per seed.
    pub sigma_tail: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

impl ConditionResult {
    pub fn label(&self) -> String {
        format!(
            "{}_{}",
            if self.target_noise_var > 0.0 {
                "target_noise"
            } else {
                "no_target_noise"
            },
            if self.precision {
                "precision_on"
            } else {
                "precision_off"
            }
        )
    }

    pub fn theta_mean(&self) -> f64 {
        mean(&self.theta_final)
    }

    pub fn theta_std(&self) -> f64 {
        std_dev(&self.theta_final)
    }

    pub fn sigma_mean(&self) -> f64 {
        mean(&self.sigma_tail)
    }

    pub fn sigma_std(&self) -> f64 {
        std_dev(&self.sigma_tail)
    }
}

#[derive(Clone, Debug)]
pub struct WeightsResult {
    pub conditions: Vec<ConditionResult>,
}

impl WeightsResult {
    pub fn condition(&self, target_noise: bool, precision: bool) -> Option<&ConditionResult> {
        self.conditions
            .iter()
            .find(|c| (c.target_noise_var > 0.0) == target_noise && c.precision == precision)
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for c in &self.conditions {
            let label = c.label();
            m.insert(format!("{label}_theta_mean"), c.theta_mean());
            m.insert(format!("{label}_theta_std"), c.theta_std());
            m.insert(format!("{label}_theta_tail_mean"), mean(&c.theta_tail));
            m.insert(format!("{label}_sigma_mean"), c.sigma_mean());
            m.insert(format!("{label}_sigma_std"), c.sigma_std());
        }
        m
    }

    /// One `traces_<condition>` file per condition; `traces` holds the noisy,
    /// precision-weighted run.
    pub fn write(&self, out: &OutputDir) -> std::result::Result<(), ExperimentError> {
        for c in &self.conditions {
            out.write_traces(&format!("traces_{}", c.label()), &c.trace)?;
        }
        let primary = self
            .condition(true, true)
            .or_else(|| self.condition(false, true));
        if let Some(c) = primary {
            out.write_traces("traces", &c.trace)?;
        }
        Ok(())
    }
}

/// One seed of the scalar weights task. Returns per-step `(theta, sigma)`.
fn weights_run(
    cfg: &ExperimentConfig,
    tree: &SeedTree,
    target_noise_var: f64,
    precision: bool,
) -> Result<Vec<(f64, f64)>> {
    let arch = &cfg.architecture;
    let mut net = PcNetwork::new(&arch.widths, &arch.activations, &mut tree.stream("init", 0))?;
    let observations = constant_signal_stream(
        cfg.run.signal_mean,
        cfg.noise.input_noise_var,
        cfg.run.steps,
        &mut tree.stream("signal", 0),
    );
    let mut target_rng = tree.stream("target", 0);
    let mut dropout_rng = tree.stream("dropout", 0);
    let schedule = Schedule {
        precision_weighting: precision,
        ..cfg.schedule.clone()
    };
    let top_width = *arch.widths.last().expect("validated");
    let target = Array1::from_elem(top_width, cfg.run.target_mean);
    let mut stepper = WeightStepper::Sgd;
    let mut out = Vec::with_capacity(observations.len());
    for x in observations {
        if target_noise_var > 0.0 {
            let sd = target_noise_var.sqrt();
            let width = net.layers[0].width();
            net.layers[0].perturbation.offset =
                Some(Array1::from_shape_fn(width, |_| sd * standard_normal(&mut target_rng)));
        }
        let obs = Array1::from_elem(net.layers[0].width(), x);
        let dropout = (cfg.noise.prediction_dropout > 0.0).then(|| Dropout {
            rate: cfg.noise.prediction_dropout,
            rng: &mut dropout_rng,
        });
        run_inference(&mut net, &obs, Some(&target), &schedule, &mut stepper, dropout)?;
        let theta = net.layers[0].theta.as_ref().expect("bottom layer has weights")[[0, 0]];
        out.push((theta, net.layers[0].sigma[0]));
    }
    net.clear_perturbations();
    Ok(out)
}

/// Learns the scalar weight mapping a fixed target to a noisy observation,
/// with and without noise on the top-down prediction and with and without
/// precision weighting. All conditions share each seed's random streams.
pub fn weights_learning(cfg: &ExperimentConfig) -> Result<WeightsResult> {
    let root = SeedTree::new(cfg.seed);
    let mut noise_levels = vec![0.0];
    if cfg.noise.target_noise_var > 0.0 {
        noise_levels.push(cfg.noise.target_noise_var);
    }
    let mut conditions = Vec::new();
    for &tn in &noise_levels {
        for precision in [true, false] {
            let runs: Vec<Vec<(f64, f64)>> = (0..cfg.run.seeds as u64)
                .into_par_iter()
                .map(|s| weights_run(cfg, &root.child("seed", s), tn, precision))
                .collect::<Result<_>>()?;
            let thetas: Vec<Vec<f64>> = runs.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
            let sigmas: Vec<Vec<f64>> = runs.iter().map(|r| r.iter().map(|p| p.1).collect()).collect();
            let per_seed_traces: Vec<Vec<TraceRecord>> = runs
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .flat_map(|(t, &(th, sg))| {
                            [
                                TraceRecord::new(t as u64, 0, Quantity::Theta, th),
                                TraceRecord::new(t as u64, 0, Quantity::Sigma, sg),
                            ]
                        })
                        .collect()
                })
                .collect();
            conditions.push(ConditionResult {
                target_noise_var: tn,
                precision,
                theta_final: thetas.iter().map(|t| *t.last().unwrap_or(&f64::NAN)).collect(),
                theta_tail: thetas.iter().map(|t| tail_mean(t, cfg.run.tail)).collect(),
                sigma_tail: sigmas.iter().map(|s| tail_mean(s, cfg.run.tail)).collect(),
                trace: average_traces(&per_seed_traces),
            });
        }
    }
    Ok(WeightsResult { conditions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ExperimentKind;

    #[test]
    fn averaging_traces() {
        let a = vec![TraceRecord::new(0, 0, Quantity::Sigma, 1.0)];
        let b = vec![TraceRecord::new(0, 0, Quantity::Sigma, 3.0)];
        assert_eq!(average_traces(&[a, b])[0].value, 2.0);
        assert_eq!(tail_mean(&[1.0, 2.0, 3.0, 5.0], 2), 4.0);
    }

    #[test]
    fn noiseless_weights_converge_to_ratio() {
        let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::WeightsLearning);
        cfg.noise.input_noise_var = 0.0;
        cfg.noise.target_noise_var = 0.0;
        cfg.run.seeds = 2;
        cfg.run.steps = 2000;
        cfg.run.tail = 100;
        let result = weights_learning(&cfg).unwrap();
        assert_eq!(result.conditions.len(), 2);
        let off = result.condition(false, false).unwrap();
        assert!((off.theta_mean() - 2.0).abs() < 1e-6, "{}", off.theta_mean());
    }
}
