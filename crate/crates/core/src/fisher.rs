//! Fisher information of the free energy: closed-form expressions in terms of
//! the learned variances, and a Monte-Carlo estimator built from the score.
//!
//! For linear-Gaussian layers the Fisher information of a layer's activities
//! is its precision `diag(1/sigma_l)`, and that of its weights is the precision
//! scaled by the second moment of the activities above,
//! `diag(1/sigma_l) (x) E[mu_{l+1} mu_{l+1}^T]`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{standard_normal, NoiseSpec, SeedTree};
use crate::error::{PcnError, Result};
use crate::pc_core::{outer, Activation, PcNetwork, Weighting};

/// Which parameter block a score or Fisher matrix refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamSelector {
    Activity(usize),
    Weights(usize),
}

impl FromStr for ParamSelector {
    type Err = PcnError;

    /// Parses `activity:<layer>` or `weights:<layer>`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || PcnError::UnknownSelector(s.to_string());
        let (kind, idx) = s.split_once(':').ok_or_else(unknown)?;
        let idx: usize = idx.trim().parse().map_err(|_| unknown())?;
        match kind.trim() {
            "activity" | "mu" => Ok(ParamSelector::Activity(idx)),
            "weights" | "theta" => Ok(ParamSelector::Weights(idx)),
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for ParamSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamSelector::Activity(l) => write!(f, "activity:{l}"),
            ParamSelector::Weights(l) => write!(f, "weights:{l}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherReport {
    pub analytic: Array2<f64>,
    pub empirical: Array2<f64>,
    /// `||empirical - analytic||_F / ||analytic||_F`.
    pub relative_error: f64,
    pub sample_count: usize,
}

/// Gradient of the log-likelihood (`-F/2`) with respect to the selected block,
/// evaluated at the stored errors. Weight scores are flattened row-major.
pub fn score(net: &PcNetwork, wrt: ParamSelector) -> Result<Array1<f64>> {
    match wrt {
        ParamSelector::Activity(l) => Ok(net.neighborhood(l)?.activity_gradient(Weighting::Precision)),
        ParamSelector::Weights(l) => {
            if l >= net.top_index() {
                return Err(PcnError::UnknownSelector(wrt.to_string()));
            }
            let g = net.weight_gradient(l)?;
            Ok(Array1::from_iter(g.iter().copied()))
        }
    }
}

/// `diag(1 / sigma)`.
pub fn analytic_fisher_activity(sigma: &Array1<f64>) -> Array2<f64> {
    Array2::from_diag(&sigma.mapv(f64::recip))
}

/// `diag(1/sigma_l) (x) Cov(mu_above)`, using the unbiased sample covariance of
/// `mu_above_samples`. Rows and columns follow the row-major flattening of
/// the weight matrix.
pub fn analytic_fisher_weights(
    sigma_l: &Array1<f64>,
    mu_above_samples: &[Array1<f64>],
) -> Result<Array2<f64>> {
    let cov = sample_covariance(mu_above_samples)?;
    let (n, m) = (sigma_l.len(), cov.nrows());
    let mut out = Array2::zeros((n * m, n * m));
    for (i, &s) in sigma_l.iter().enumerate() {
        out.slice_mut(ndarray::s![i * m..(i + 1) * m, i * m..(i + 1) * m])
            .assign(&(&cov / s));
    }
    Ok(out)
}

fn sample_covariance(samples: &[Array1<f64>]) -> Result<Array2<f64>> {
    if samples.len() < 2 {
        return Err(PcnError::TooFewSamples {
            required: 2,
            actual: samples.len(),
        });
    }
    let m = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = Array1::<f64>::zeros(m);
    for s in samples {
        mean += s;
    }
    mean /= n;
    let mut cov = Array2::<f64>::zeros((m, m));
    for s in samples {
        let d = s - &mean;
        cov += &outer(&d, &d);
    }
    Ok(cov / (n - 1.0))
}

/// Closed-form Fisher information of the activities of layer `l` in a linear
/// network: the layer's own precision plus, for layers with a layer below,
/// `theta_{l-1}^T diag(1/sigma_{l-1}) theta_{l-1}`. For the bottom layer this
/// is exactly [`analytic_fisher_activity`].
pub fn analytic_fisher_activity_in_network(net: &PcNetwork, l: usize) -> Result<Array2<f64>> {
    let layer = net.layer(l)?;
    let n = layer.width();
    let mut out = if layer.is_top() {
        Array2::zeros((n, n))
    } else {
        analytic_fisher_activity(&layer.sigma)
    };
    if l > 0 {
        let below = &net.layers[l - 1];
        let theta = below.theta.as_ref().expect("below layer has weights");
        let scaled = theta / &below.sigma.view().insert_axis(ndarray::Axis(1));
        out += &theta.t().dot(&scaled);
    }
    Ok(out)
}

const MIN_SAMPLES: usize = 1000;
const CHUNK: usize = 1000;

/// Monte-Carlo Fisher information as the mean outer product of scores.
///
/// Each sample draws the top layer from `N(mu_top, target_noise_var)` and every
/// lower layer from its own generative distribution
/// `N(theta_l mu_{l+1}, sigma_l)`; the bottom layer gets an extra
/// `N(0, input_noise_var)` when that is non-zero (misspecified data). Scores
/// are evaluated at the generating parameters. Samples are drawn in chunks of
/// 1000, chunk `c` from substream `("fisher", c)` of `seed`, so the result does
/// not depend on the number of threads.
pub fn empirical_fisher(
    net: &PcNetwork,
    wrt: ParamSelector,
    noise: &NoiseSpec,
    samples: usize,
    seed: u64,
) -> Result<FisherReport> {
    for (l, layer) in net.layers.iter().enumerate() {
        if !layer.is_top() && layer.activation != Activation::Identity {
            return Err(PcnError::NonlinearActivation {
                layer: l,
                activation: layer.activation.name(),
            });
        }
    }
    if samples < MIN_SAMPLES {
        return Err(PcnError::TooFewSamples {
            required: MIN_SAMPLES,
            actual: samples,
        });
    }
    if noise.prediction_dropout != 0.0 {
        return Err(PcnError::InvalidArgument(
            "empirical_fisher samples from the noiseless generative model; \
             prediction dropout must be 0"
                .into(),
        ));
    }
    noise.validate()?;
    let dim = score_dim(net, wrt)?;
    let above = match wrt {
        ParamSelector::Weights(l) => Some(l + 1),
        ParamSelector::Activity(_) => None,
    };

    let tree = SeedTree::new(seed);
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<(Array2<f64>, Vec<Array1<f64>>)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut rng = tree.stream("fisher", c as u64);
            let mut local = net.clone();
            local.clear_perturbations();
            let base_top = net.layers[net.top_index()].mu.clone();
            let count = CHUNK.min(samples - c * CHUNK);
            let mut acc = Array2::zeros((dim, dim));
            let mut above_samples = Vec::new();
            for _ in 0..count {
                sample_generative(&mut local, &base_top, noise, &mut rng)?;
                local.compute_errors()?;
                let u = score(&local, wrt)?;
                acc += &outer(&u, &u);
                if let Some(a) = above {
                    above_samples.push(local.layers[a].mu.clone());
                }
            }
            Ok((acc, above_samples))
        })
        .collect::<Result<_>>()?;

    let mut empirical = Array2::zeros((dim, dim));
    let mut above_samples = Vec::new();
    for (acc, s) in partials {
        empirical += &acc;
        above_samples.extend(s);
    }
    empirical /= samples as f64;
    // Exact symmetry regardless of summation order.
    let empirical = (&empirical + &empirical.t()) / 2.0;

    let analytic = match wrt {
        ParamSelector::Activity(l) => analytic_fisher_activity_in_network(net, l)?,
        ParamSelector::Weights(l) => analytic_fisher_weights(&net.layers[l].sigma, &above_samples)?,
    };
    let relative_error = relative_frobenius(&empirical, &analytic);
    Ok(FisherReport {
        analytic,
        empirical,
        relative_error,
        sample_count: samples,
    })
}

fn score_dim(net: &PcNetwork, wrt: ParamSelector) -> Result<usize> {
    match wrt {
        ParamSelector::Activity(l) => Ok(net.layer(l)?.width()),
        ParamSelector::Weights(l) if l < net.top_index() => {
            Ok(net.layers[l].width() * net.layers[l + 1].width())
        }
        ParamSelector::Weights(_) => Err(PcnError::UnknownSelector(wrt.to_string())),
    }
}

/// Ancestral sample of every layer's activities from the generative model.
fn sample_generative<R: rand::Rng + ?Sized>(
    net: &mut PcNetwork,
    base_top: &Array1<f64>,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<()> {
    let top = net.top_index();
    let sd_top = noise.target_noise_var.sqrt();
    let top_mu = base_top.mapv(|m| m + sd_top * standard_normal(rng));
    net.layers[top].mu = top_mu;
    for l in (0..top).rev() {
        let pred = net.prediction(l)?;
        let extra = if l == 0 { noise.input_noise_var } else { 0.0 };
        let layer = &mut net.layers[l];
        layer.mu = Array1::from_iter(
            pred.iter()
                .zip(&layer.sigma)
                .map(|(&p, &s)| p + (s + extra).sqrt() * standard_normal(rng)),
        );
    }
    Ok(())
}

/// `||a - b||_F / ||b||_F`, or `||a||_F` when `b` is zero.
pub fn relative_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let norm = b.mapv(|x| x * x).sum().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc_core::LayerState;
    use ndarray::array;

    fn linear(sigma0: Array1<f64>, theta: Array2<f64>, top: Array1<f64>) -> PcNetwork {
        let n = sigma0.len();
        let mut net = PcNetwork::from_layers(vec![
            LayerState::predicted(Array1::zeros(n), theta, Activation::Identity),
            LayerState::top(top),
        ])
        .unwrap();
        net.layers[0].sigma = sigma0;
        net
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("activity:0".parse::<ParamSelector>().unwrap(), ParamSelector::Activity(0));
        assert_eq!("weights:2".parse::<ParamSelector>().unwrap(), ParamSelector::Weights(2));
        assert!(matches!("bias:0".parse::<ParamSelector>(), Err(PcnError::UnknownSelector(_))));
        assert!(matches!("weights".parse::<ParamSelector>(), Err(PcnError::UnknownSelector(_))));
    }

    #[test]
    fn score_is_zero_at_the_minimum() {
        let mut net = linear(array![1.0], array![[2.0]], array![1.5]);
        net.layers[0].mu = array![3.0];
        net.compute_errors().unwrap();
        assert_eq!(score(&net, ParamSelector::Activity(0)).unwrap(), array![0.0]);
        assert_eq!(score(&net, ParamSelector::Weights(0)).unwrap(), array![0.0]);
        assert_eq!(score(&net, ParamSelector::Activity(1)).unwrap(), array![0.0]);
    }

    #[test]
    fn score_matches_activity_gradient_and_hand_value() {
        // mu = 3, prediction 1 * 2 = 2, sigma = 1.
        let mut net = linear(array![1.0], array![[1.0]], array![2.0]);
        net.layers[0].mu = array![3.0];
        net.compute_errors().unwrap();
        let u = score(&net, ParamSelector::Activity(0)).unwrap();
        assert_eq!(u, net.activity_gradient(0).unwrap());
        assert_eq!(u, array![-1.0]);
    }

    #[test]
    fn unknown_weight_selector() {
        let net = linear(array![1.0], array![[1.0]], array![0.0]);
        assert!(matches!(
            score(&net, ParamSelector::Weights(1)),
            Err(PcnError::UnknownSelector(_))
        ));
    }

    #[test]
    fn analytic_activity_examples() {
        assert_eq!(analytic_fisher_activity(&array![2.0]), array![[0.5]]);
        assert_eq!(analytic_fisher_activity(&array![1.0, 1.0]), Array2::<f64>::eye(2));
        assert_eq!(
            analytic_fisher_activity(&array![0.5, 4.0]),
            array![[2.0, 0.0], [0.0, 0.25]]
        );
    }

    #[test]
    fn analytic_weight_examples() {
        // Unbiased variance of {-1.5, 1.5, -1.5, 1.5} is 3.
        let samples: Vec<_> = [-1.5, 1.5, -1.5, 1.5].iter().map(|&x| array![x]).collect();
        let f = analytic_fisher_weights(&array![1.0], &samples).unwrap();
        assert!((f[[0, 0]] - 3.0).abs() < 1e-12);

        let constant: Vec<_> = (0..5).map(|_| array![2.0, -1.0]).collect();
        let f = analytic_fisher_weights(&array![1.0, 3.0], &constant).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
        assert_eq!(f.dim(), (4, 4));

        assert!(matches!(
            analytic_fisher_weights(&array![1.0], &[array![1.0]]),
            Err(PcnError::TooFewSamples { required: 2, actual: 1 })
        ));
    }

    #[test]
    fn empirical_rejects_bad_inputs() {
        let mut net = linear(array![1.0], array![[1.0]], array![0.0]);
        let noise = NoiseSpec::default();
        assert!(matches!(
            empirical_fisher(&net, ParamSelector::Activity(0), &noise, 999, 0),
            Err(PcnError::TooFewSamples { .. })
        ));
        net.layers[0].activation = Activation::Tanh;
        let err = empirical_fisher(&net, ParamSelector::Activity(0), &noise, 1000, 0).unwrap_err();
        assert!(err.to_string().contains("linear"), "{err}");
    }

    #[test]
    fn empirical_is_symmetric_and_psd() {
        let net = linear(array![1.0, 2.0], array![[1.0, 0.5], [-0.3, 2.0]], array![0.0, 0.0]);
        let noise = NoiseSpec {
            target_noise_var: 1.0,
            ..NoiseSpec::default()
        };
        let r = empirical_fisher(&net, ParamSelector::Weights(0), &noise, 2000, 3).unwrap();
        assert_eq!(r.empirical, r.empirical.t());
        // PSD: all 2x2 principal minors and diagonals non-negative, and
        // v^T F v >= 0 for a spread of directions.
        let d = r.empirical.nrows();
        for k in 0..50 {
            let v = Array1::from_shape_fn(d, |i| ((i * 7 + k * 13) as f64).sin());
            assert!(v.dot(&r.empirical.dot(&v)) >= -1e-12);
        }
    }

    #[test]
    fn scalar_activity_fisher_close_to_precision() {
        let net = linear(array![2.0], array![[1.0]], array![0.0]);
        let r = empirical_fisher(&net, ParamSelector::Activity(0), &NoiseSpec::default(), 100_000, 7)
            .unwrap();
        assert!((r.empirical[[0, 0]] - 0.5).abs() / 0.5 < 0.05, "{}", r.empirical[[0, 0]]);
        assert!(r.relative_error < 0.05);
    }

    #[test]
    fn hidden_activity_fisher_includes_layer_below() {
        let mut net = PcNetwork::from_layers(vec![
            LayerState::predicted(array![0.0, 0.0], array![[1.0], [0.5]], Activation::Identity),
            LayerState::predicted(array![0.0], array![[0.7]], Activation::Identity),
            LayerState::top(array![0.0]),
        ])
        .unwrap();
        net.layers[0].sigma = array![0.5, 2.0];
        net.layers[1].sigma = array![1.5];
        let noise = NoiseSpec {
            target_noise_var: 1.0,
            ..NoiseSpec::default()
        };
        let r = empirical_fisher(&net, ParamSelector::Activity(1), &noise, 50_000, 1).unwrap();
        let expected = 1.0 / 1.5 + 1.0 / 0.5 + 0.25 / 2.0;
        assert!((r.analytic[[0, 0]] - expected).abs() < 1e-12);
        assert!(r.relative_error < 0.05, "{}", r.relative_error);
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let net = linear(array![1.0, 2.0, 4.0], array![[1.0], [0.5], [-1.0]], array![0.0]);
        let noise = NoiseSpec {
            target_noise_var: 2.0,
            ..NoiseSpec::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| empirical_fisher(&net, ParamSelector::Weights(0), &noise, 5000, 9).unwrap());
        let b = three.install(|| empirical_fisher(&net, ParamSelector::Weights(0), &noise, 5000, 9).unwrap());
        assert_eq!(a, b);
    }
}
