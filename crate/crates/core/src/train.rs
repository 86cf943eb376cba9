//! Inference and learning loops: activity relaxation, SGD and Adadelta weight
//! steppers, and per-sample settling with clamped data.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dropout_mask;
use crate::error::{PcnError, Result};
use crate::pc_core::{PcNetwork, Weighting, SIGMA_FLOOR};
use crate::precision::update_variances;

/// Optional extra factor applied on top of the precision-weighted gradient.
///
/// The gradient already carries `1/sigma` through the weighted errors.
/// `Precision` multiplies by `1/sigma` once more, `Covariance` by `sigma`
/// (the inverse of the activity Fisher information of the layer's own
/// prediction). `Natural` acts like `Covariance` and additionally divides
/// the top layer's activity steps by the diagonal of its Fisher information,
/// `diag(theta^T Sigma^-1 theta)` taken from the layer below, since the top
/// has no variance of its own.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    None,
    Precision,
    Covariance,
    Natural,
}

/// Iteration counts and step sizes for activities, weights and variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub t_activity: usize,
    pub weight_updates_per_sample: usize,
    pub variance_updates_per_sample: usize,
    pub eta_mu: f64,
    pub eta_theta: f64,
    pub eta_sigma: f64,
    /// Lower bound applied after every variance update; never below
    /// [`SIGMA_FLOOR`].
    pub sigma_floor: f64,
    /// When false, gradients treat every variance as 1 while variances are
    /// still estimated.
    pub precision_weighting: bool,
    pub preconditioner: Preconditioner,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            t_activity: 10,
            weight_updates_per_sample: 1,
            variance_updates_per_sample: 1,
            eta_mu: 0.1,
            eta_theta: 0.01,
            eta_sigma: 0.1,
            sigma_floor: SIGMA_FLOOR,
            precision_weighting: true,
            preconditioner: Preconditioner::None,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_mu", self.eta_mu),
            ("eta_theta", self.eta_theta),
            ("eta_sigma", self.eta_sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PcnError::InvalidArgument(format!(
                    "schedule.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.sigma_floor >= SIGMA_FLOOR) || !self.sigma_floor.is_finite() {
            return Err(PcnError::InvalidArgument(format!(
                "schedule.sigma_floor must be at least {SIGMA_FLOOR}, got {}",
                self.sigma_floor
            )));
        }
        if self.eta_sigma > 1.0 {
            return Err(PcnError::InvalidArgument(format!(
                "schedule.eta_sigma must lie in (0, 1], got {}",
                self.eta_sigma
            )));
        }
        Ok(())
    }

    pub fn weighting(&self) -> Weighting {
        if self.precision_weighting {
            Weighting::Precision
        } else {
            Weighting::Unit
        }
    }
}

fn preconditioner_scale(pre: Preconditioner, sigma: &Array1<f64>) -> Option<Array1<f64>> {
    match pre {
        Preconditioner::None => None,
        Preconditioner::Precision => Some(sigma.mapv(f64::recip)),
        Preconditioner::Covariance | Preconditioner::Natural => Some(sigma.clone()),
    }
}

/// Moves every unclamped layer's activities by `eta_mu` times its descent
/// direction. All directions are computed from the current errors before any
/// layer moves. Errors are not recomputed.
pub fn step_activities(net: &mut PcNetwork, schedule: &Schedule) -> Result<()> {
    let weighting = schedule.weighting();
    let mut steps = Vec::with_capacity(net.depth());
    for l in 0..net.depth() {
        let layer = &net.layers[l];
        if layer.clamped {
            continue;
        }
        let mut grad = net.activity_gradient_with(l, weighting)?;
        if schedule.preconditioner == Preconditioner::Natural {
            let curvature = net.neighborhood(l)?.activity_curvature(weighting);
            Zip::from(&mut grad).and(&curvature).for_each(|g, &c| {
                if c > 0.0 {
                    *g /= c;
                }
            });
        } else if !layer.is_top() {
            if let Some(scale) = preconditioner_scale(schedule.preconditioner, &layer.sigma) {
                grad *= &scale;
            }
        }
        steps.push((l, grad));
    }
    for (l, grad) in steps {
        net.layers[l].mu.scaled_add(schedule.eta_mu, &grad);
    }
    Ok(())
}

/// `theta += eta_theta * (descent direction)` on every layer. With
/// `precision_on == false` the gradients use unit variances.
pub fn step_weights_sgd(net: &mut PcNetwork, schedule: &Schedule, precision_on: bool) -> Result<()> {
    let weighting = if precision_on {
        Weighting::Precision
    } else {
        Weighting::Unit
    };
    for l in 0..net.top_index() {
        let scale = preconditioner_scale(schedule.preconditioner, &net.layers[l].sigma);
        let mut theta = net.layers[l]
            .theta
            .take()
            .expect("every non-top layer has weights");
        net.neighborhood(l)?.weight_gradient_into(
            weighting,
            scale.as_ref(),
            schedule.eta_theta,
            &mut theta,
        );
        net.layers[l].theta = Some(theta);
    }
    Ok(())
}

/// Per-parameter running averages for Adadelta.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub acc_grad_sq: Vec<Array2<f64>>,
    pub acc_update_sq: Vec<Array2<f64>>,
    pub rho: f64,
    pub eps_hat: f64,
}

impl AdadeltaState {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    /// Zeroed accumulators shaped like `net`'s weights.
    pub fn for_network(net: &PcNetwork, rho: f64, eps_hat: f64) -> Self {
        let shapes: Vec<_> = net
            .layers
            .iter()
            .filter_map(|l| l.theta.as_ref().map(|t| t.raw_dim()))
            .collect();
        Self {
            acc_grad_sq: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            acc_update_sq: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            rho,
            eps_hat,
        }
    }
}

/// One Adadelta step for a single parameter with gradient `g` (of the loss,
/// not the descent direction). Updates the accumulators and returns the
/// parameter change.
#[inline]
pub fn adadelta_delta(g: f64, acc_grad_sq: &mut f64, acc_update_sq: &mut f64, rho: f64, eps: f64) -> f64 {
    *acc_grad_sq = rho * *acc_grad_sq + (1.0 - rho) * g * g;
    let delta = -((*acc_update_sq + eps).sqrt() / (*acc_grad_sq + eps).sqrt()) * g;
    *acc_update_sq = rho * *acc_update_sq + (1.0 - rho) * delta * delta;
    delta
}

pub fn step_weights_adadelta(
    net: &mut PcNetwork,
    state: &mut AdadeltaState,
    precision_on: bool,
) -> Result<()> {
    let weighting = if precision_on {
        Weighting::Precision
    } else {
        Weighting::Unit
    };
    if state.acc_grad_sq.len() != net.top_index() {
        return Err(PcnError::ShapeMismatch {
            context: "adadelta state layers",
            expected: vec![net.top_index()],
            actual: vec![state.acc_grad_sq.len()],
        });
    }
    let (rho, eps) = (state.rho, state.eps_hat);
    for l in 0..net.top_index() {
        let descent = net.weight_gradient_with(l, weighting)?;
        let acc_g = &mut state.acc_grad_sq[l];
        let acc_u = &mut state.acc_update_sq[l];
        if acc_g.dim() != descent.dim() || acc_u.dim() != descent.dim() {
            return Err(PcnError::ShapeMismatch {
                context: "adadelta state vs weights",
                expected: vec![descent.nrows(), descent.ncols()],
                actual: vec![acc_g.nrows(), acc_g.ncols()],
            });
        }
        let theta = net.layers[l].theta.as_mut().expect("non-top layer");
        Zip::from(theta)
            .and(&descent)
            .and(acc_g)
            .and(acc_u)
            .for_each(|w, &d, ag, au| *w += adadelta_delta(-d, ag, au, rho, eps));
    }
    Ok(())
}

/// How weights change after a sample has settled.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightStepper {
    Frozen,
    Sgd,
    Adadelta(AdadeltaState),
}

impl WeightStepper {
    pub fn step(&mut self, net: &mut PcNetwork, schedule: &Schedule) -> Result<()> {
        let precision_on = schedule.precision_weighting;
        match self {
            WeightStepper::Frozen => Ok(()),
            WeightStepper::Sgd => step_weights_sgd(net, schedule, precision_on),
            WeightStepper::Adadelta(state) => step_weights_adadelta(net, state, precision_on),
        }
    }
}

/// Free energy right after clamping and after the activity phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceReport {
    pub free_energy_clamped: f64,
    pub free_energy_settled: f64,
}

/// Fresh dropout masks on every top-down prediction for one sample.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// Clamps `observation` to the bottom layer (and `target`, if any, to the
/// top), initializes free layers top-down, relaxes activities for
/// `t_activity` steps and then applies the configured weight and variance
/// updates.
///
/// Without a target the top layer is released and keeps its current
/// activities as the starting point.
pub fn run_inference<R: Rng + ?Sized>(
    net: &mut PcNetwork,
    observation: &Array1<f64>,
    target: Option<&Array1<f64>>,
    schedule: &Schedule,
    stepper: &mut WeightStepper,
    dropout: Option<Dropout<'_, R>>,
) -> Result<InferenceReport> {
    let top = net.top_index();
    net.clamp(0, observation)?;
    match target {
        Some(t) => net.clamp(top, t)?,
        None => net.release(top)?,
    }
    net.initialize_top_down()?;

    let masked = match dropout {
        Some(d) if d.rate > 0.0 => {
            for l in 0..top {
                let n = net.layers[l].width();
                net.layers[l].perturbation.mask = Some(dropout_mask(n, d.rate, d.rng));
            }
            true
        }
        _ => false,
    };

    net.compute_errors()?;
    let free_energy_clamped = net.free_energy()?;
    for _ in 0..schedule.t_activity {
        step_activities(net, schedule)?;
        net.compute_errors()?;
    }
    let free_energy_settled = net.free_energy()?;

    for k in 0..schedule.weight_updates_per_sample {
        if k > 0 {
            net.compute_errors()?;
        }
        stepper.step(net, schedule)?;
    }
    for _ in 0..schedule.variance_updates_per_sample {
        update_variances(net, schedule.eta_sigma, schedule.sigma_floor);
    }

    if masked {
        for layer in &mut net.layers {
            layer.perturbation.mask = None;
        }
    }
    Ok(InferenceReport {
        free_energy_clamped,
        free_energy_settled,
    })
}

/// Relaxes the free activities for `iterations` steps without learning.
/// Clamping is left as the caller set it.
pub fn settle(net: &mut PcNetwork, schedule: &Schedule, iterations: usize) -> Result<()> {
    net.compute_errors()?;
    for _ in 0..iterations {
        step_activities(net, schedule)?;
        net.compute_errors()?;
    }
    Ok(())
}
