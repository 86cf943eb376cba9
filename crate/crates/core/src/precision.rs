//! Variance (inverse precision) estimation and precision-weighted errors.
//!
//! Each predicted unit tracks the variance of its own prediction error with
//! the relaxation
//!
//! ```text
//! sigma <- max(sigma + eta_sigma * (eps^2 - sigma), SIGMA_FLOOR)
//! ```
//!
//! whose fixed point under stationary errors is `E[eps^2]`.

use ndarray::{Array1, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dropout_mask;
use crate::error::{PcnError, Result};
use crate::pc_core::{PcNetwork, SIGMA_FLOOR};
use crate::trace::{Quantity, TraceRecord};
use crate::train::{run_inference, step_activities, Dropout, Schedule, WeightStepper};

/// What stays fixed while variances are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Weights and all free activities frozen; only observations change.
    FixedPosterior,
    /// Top-down predictions computed once and reused; hidden activities relax
    /// toward them.
    FixedPrediction,
    /// Activities, weights and variances all update.
    Joint,
}

impl VarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMode::FixedPosterior => "fixed_posterior",
            VarianceMode::FixedPrediction => "fixed_prediction",
            VarianceMode::Joint => "joint",
        }
    }
}

/// `eps / sigma`.
pub fn precision_weighted_error(epsilon: &Array1<f64>, sigma: &Array1<f64>) -> Array1<f64> {
    epsilon / sigma
}

/// One relaxation step of every variance toward its squared error.
pub fn variance_step(epsilon: &Array1<f64>, sigma: &Array1<f64>, eta_sigma: f64) -> Array1<f64> {
    variance_step_floored(epsilon, sigma, eta_sigma, SIGMA_FLOOR)
}

/// [`variance_step`] with a floor above the default one.
pub fn variance_step_floored(
    epsilon: &Array1<f64>,
    sigma: &Array1<f64>,
    eta_sigma: f64,
    floor: f64,
) -> Array1<f64> {
    let mut next = sigma.clone();
    variance_step_in_place(epsilon, &mut next, eta_sigma, floor);
    next
}

fn variance_step_in_place(epsilon: &Array1<f64>, sigma: &mut Array1<f64>, eta_sigma: f64, floor: f64) {
    let floor = floor.max(SIGMA_FLOOR);
    Zip::from(sigma).and(epsilon).for_each(|s, &e| {
        *s = (*s + eta_sigma * (e * e - *s)).max(floor);
    });
}

/// Applies [`variance_step_floored`] to every predicted layer using its
/// stored errors.
pub fn update_variances(net: &mut PcNetwork, eta_sigma: f64, floor: f64) {
    for layer in net.layers.iter_mut().filter(|l| !l.is_top()) {
        variance_step_in_place(&layer.epsilon, &mut layer.sigma, eta_sigma, floor);
    }
}

fn record_sigmas(net: &PcNetwork, step: u64, out: &mut Vec<TraceRecord>) {
    for (l, layer) in net.layers.iter().enumerate().filter(|(_, l)| !l.is_top()) {
        let mean = layer.sigma.mean().unwrap_or(f64::NAN);
        out.push(TraceRecord::new(step, l, Quantity::Sigma, mean));
    }
}

/// Repeatedly presents observations to the bottom layer and updates the
/// variances of every layer, recording each predicted layer's mean variance
/// after every step.
///
/// Observations are consumed cyclically when `steps` exceeds the stream
/// length. `dropout` (a rate in `[0, 1)`) draws a fresh mask on every
/// top-down prediction at every step. In [`VarianceMode::Joint`] the network
/// runs a full [`run_inference`] per observation with SGD weight updates.
pub fn run_variance_estimation<R: Rng + ?Sized>(
    net: &mut PcNetwork,
    stream: &[Array1<f64>],
    mode: VarianceMode,
    steps: usize,
    schedule: &Schedule,
    dropout: f64,
    rng: &mut R,
) -> Result<Vec<TraceRecord>> {
    if stream.is_empty() {
        return Err(PcnError::EmptyStream);
    }
    let top = net.top_index();
    let mut trace = Vec::with_capacity(steps * top);

    // Predictions used by FixedPrediction, taken from the starting state.
    let fixed: Vec<Array1<f64>> = match mode {
        VarianceMode::FixedPrediction => (0..top)
            .map(|l| net.prediction(l))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };

    for (step, obs) in stream.iter().cycle().take(steps).enumerate() {
        match mode {
            VarianceMode::FixedPosterior => {
                net.clamp(0, obs)?;
                if dropout > 0.0 {
                    for l in 0..top {
                        let n = net.layers[l].width();
                        net.layers[l].perturbation.mask = Some(dropout_mask(n, dropout, rng));
                    }
                }
                net.compute_errors()?;
                update_variances(net, schedule.eta_sigma, schedule.sigma_floor);
            }
            VarianceMode::FixedPrediction => {
                net.clamp(0, obs)?;
                let preds: Vec<Array1<f64>> = fixed
                    .iter()
                    .map(|p| {
                        if dropout > 0.0 {
                            p * &dropout_mask(p.len(), dropout, rng)
                        } else {
                            p.clone()
                        }
                    })
                    .collect();
                for _ in 0..schedule.t_activity {
                    for (l, p) in preds.iter().enumerate() {
                        let layer = &mut net.layers[l];
                        layer.epsilon = &layer.mu - p;
                        if !layer.clamped {
                            // With the prediction held fixed only the layer's
                            // own error depends on its activities.
                            let step = precision_weighted_error(&layer.epsilon, &layer.sigma);
                            layer.mu.scaled_add(-schedule.eta_mu, &step);
                        }
                    }
                }
                for (l, p) in preds.iter().enumerate() {
                    let layer = &mut net.layers[l];
                    layer.epsilon = &layer.mu - p;
                }
                update_variances(net, schedule.eta_sigma, schedule.sigma_floor);
            }
            VarianceMode::Joint => {
                let sample_schedule = Schedule {
                    variance_updates_per_sample: 1,
                    ..schedule.clone()
                };
                let dropout = (dropout > 0.0).then(|| Dropout {
                    rate: dropout,
                    rng: &mut *rng,
                });
                run_inference(net, obs, None, &sample_schedule, &mut WeightStepper::Sgd, dropout)?;
            }
        }
        record_sigmas(net, step as u64, &mut trace);
    }
    for layer in &mut net.layers {
        layer.perturbation.mask = None;
    }
    Ok(trace)
}

/// Relaxes the free activities on a clean observation so the hidden layers
/// hold a posterior before variance estimation starts.
pub fn settle_posterior(
    net: &mut PcNetwork,
    observation: &Array1<f64>,
    schedule: &Schedule,
    iterations: usize,
) -> Result<()> {
    net.clamp(0, observation)?;
    net.compute_errors()?;
    for _ in 0..iterations {
        step_activities(net, schedule)?;
        net.compute_errors()?;
    }
    Ok(())
}
