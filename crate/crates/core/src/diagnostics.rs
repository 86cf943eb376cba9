//! Built-in numerical checks exposed by the `gradcheck` and `fisher-check`
//! subcommands.

use ndarray::{array, Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::data::{NoiseSpec, SeedTree};
use crate::error::Result;
use crate::fisher::{empirical_fisher, ParamSelector};
use crate::pc_core::{Activation, LayerState, PcNetwork};

/// Largest relative error between analytic and finite-difference gradients.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub networks: usize,
    pub parameters: usize,
    pub max_relative_error: f64,
}

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Random network with 2-4 layers of 1-32 units, random activations,
/// variances in `[0.5, 2]` and free activities in `[-1, 1]`.
pub fn random_network<R: Rng + ?Sized>(rng: &mut R) -> Result<PcNetwork> {
    let depth = rng.random_range(2..=4);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=32)).collect();
    let activations: Vec<Activation> = (0..depth - 1)
        .map(|_| {
            if rng.random::<bool>() {
                Activation::Tanh
            } else {
                Activation::Identity
            }
        })
        .collect();
    let mut net = PcNetwork::new(&widths, &activations, rng)?;
    for layer in &mut net.layers {
        layer.mu.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        if !layer.is_top() {
            layer.sigma.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
    }
    Ok(net)
}

fn energy(net: &mut PcNetwork) -> Result<f64> {
    net.compute_errors()?;
    net.free_energy()
}

fn weight(net: &PcNetwork, l: usize, i: usize, j: usize) -> f64 {
    net.layers[l].theta.as_ref().expect("weights")[[i, j]]
}

fn set_weight(net: &mut PcNetwork, l: usize, i: usize, j: usize, value: f64) {
    net.layers[l].theta.as_mut().expect("weights")[[i, j]] = value;
}

/// Relative error `||a - b|| / max(||a||, ||b||)` of two gradient blocks;
/// zero when both vanish.
pub fn block_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares `-dF/dx` (as `2 x` the returned descent directions of `F/2`) with
/// central differences of the free energy for every activity and weight of
/// `networks` random networks.
pub fn gradcheck(seed: u64, networks: usize) -> Result<GradcheckReport> {
    let tree = SeedTree::new(seed);
    let mut worst: f64 = 0.0;
    let mut parameters = 0;
    for k in 0..networks {
        let mut rng = tree.stream("gradcheck", k as u64);
        let mut net = random_network(&mut rng)?;
        net.compute_errors()?;
        for l in 0..net.depth() {
            let analytic: Vec<f64> = net.activity_gradient(l)?.iter().map(|g| -2.0 * g).collect();
            let mut numeric = Vec::with_capacity(analytic.len());
            for i in 0..net.layers[l].width() {
                let orig = net.layers[l].mu[i];
                net.layers[l].mu[i] = orig + GRADCHECK_STEP;
                let fp = energy(&mut net)?;
                net.layers[l].mu[i] = orig - GRADCHECK_STEP;
                let fm = energy(&mut net)?;
                net.layers[l].mu[i] = orig;
                numeric.push((fp - fm) / (2.0 * GRADCHECK_STEP));
            }
            net.compute_errors()?;
            worst = worst.max(block_relative_error(&analytic, &numeric));
            parameters += analytic.len();
        }
        for l in 0..net.top_index() {
            let analytic: Vec<f64> = net.weight_gradient(l)?.iter().map(|g| -2.0 * g).collect();
            let (rows, cols) = net.layers[l].theta.as_ref().map(Array2::dim).unwrap_or((0, 0));
            let mut numeric = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let orig = weight(&net, l, i, j);
                    set_weight(&mut net, l, i, j, orig + GRADCHECK_STEP);
                    let fp = energy(&mut net)?;
                    set_weight(&mut net, l, i, j, orig - GRADCHECK_STEP);
                    let fm = energy(&mut net)?;
                    set_weight(&mut net, l, i, j, orig);
                    numeric.push((fp - fm) / (2.0 * GRADCHECK_STEP));
                }
            }
            net.compute_errors()?;
            worst = worst.max(block_relative_error(&analytic, &numeric));
            parameters += analytic.len();
        }
    }
    Ok(GradcheckReport {
        networks,
        parameters,
        max_relative_error: worst,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FisherCheck {
    pub name: &'static str,
    pub relative_error: f64,
    pub samples: usize,
}

/// Single linear layer predicted from a zero-mean latent.
pub fn linear_layer(sigma: Array1<f64>, theta: Array2<f64>) -> Result<PcNetwork> {
    let n = sigma.len();
    let above = theta.ncols();
    let mut net = PcNetwork::from_layers(vec![
        LayerState::predicted(Array1::zeros(n), theta, Activation::Identity),
        LayerState::top(Array1::zeros(above)),
    ])?;
    net.layers[0].sigma = sigma;
    Ok(net)
}

/// Monte-Carlo vs closed-form Fisher information for activities and weights
/// of a scalar and a 3-unit linear layer.
pub fn fisher_check(seed: u64, samples: usize) -> Result<Vec<FisherCheck>> {
    let noise = NoiseSpec {
        target_noise_var: 1.0,
        ..NoiseSpec::default()
    };
    let scalar = linear_layer(array![2.0], array![[1.5]])?;
    let three = linear_layer(
        array![1.0, 2.0, 4.0],
        array![[1.0, -0.5], [0.3, 0.8], [-1.2, 0.4]],
    )?;
    let cases = [
        ("scalar_activity", &scalar, ParamSelector::Activity(0)),
        ("scalar_weights", &scalar, ParamSelector::Weights(0)),
        ("three_unit_activity", &three, ParamSelector::Activity(0)),
        ("three_unit_weights", &three, ParamSelector::Weights(0)),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, (name, net, sel))| {
            let report = empirical_fisher(net, *sel, &noise, samples, seed.wrapping_add(i as u64))?;
            Ok(FisherCheck {
                name,
                relative_error: report.relative_error,
                samples,
            })
        })
        .collect()
}
