//! Label-clamped MNIST experiments: classification by inferring the label
//! layer, and prior vs posterior reconstruction of the input.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{mean, ExperimentError, OutputDir};
use crate::cli::config::{ExperimentConfig, OptimizerKind};
use crate::data::{add_gaussian_noise, one_hot, Dataset, SeedTree};
use crate::error::Result;
use crate::pc_core::PcNetwork;
use crate::trace::{Quantity, TraceRecord};
use crate::train::{run_inference, settle, AdadeltaState, Dropout, Schedule, WeightStepper};

pub const CLASSES: usize = 10;
const EVAL_CHUNK: usize = 250;
/// Training samples between two logged points of the running traces.
const LOG_EVERY: usize = 1000;

pub fn build_network(cfg: &ExperimentConfig, tree: &SeedTree) -> Result<PcNetwork> {
    let arch = &cfg.architecture;
    PcNetwork::new(&arch.widths, &arch.activations, &mut tree.stream("init", 0))
}

pub fn make_stepper(cfg: &ExperimentConfig, net: &PcNetwork) -> WeightStepper {
    match cfg.run.optimizer {
        OptimizerKind::Sgd => WeightStepper::Sgd,
        OptimizerKind::Adadelta => WeightStepper::Adadelta(AdadeltaState::for_network(
            net,
            cfg.run.adadelta_rho,
            cfg.run.adadelta_eps,
        )),
    }
}

/// Number of samples to use from a split given an optional cap.
pub fn limit(data: &Dataset, cap: Option<usize>) -> usize {
    cap.map_or(data.count(), |n| n.min(data.count()))
}

/// Trains for `cfg.run.epochs` passes over (a prefix of) `train`, each in a
/// fresh seeded order. With `supervised` the one-hot label is clamped to the
/// top layer; otherwise the top starts at zero for every sample and is
/// inferred. `after_epoch` sees the network after every epoch.
pub fn train_network(
    cfg: &ExperimentConfig,
    tree: &SeedTree,
    net: &mut PcNetwork,
    train: &Dataset,
    supervised: bool,
    mut after_epoch: impl FnMut(usize, &PcNetwork) -> Result<()>,
) -> Result<Vec<TraceRecord>> {
    let n = limit(train, cfg.run.train_samples);
    let mut stepper = make_stepper(cfg, net);
    let top = net.top_index();
    let mut trace = Vec::new();
    let mut seen: u64 = 0;
    let mut window = Vec::with_capacity(LOG_EVERY);
    for epoch in 0..cfg.run.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut tree.stream("shuffle", epoch as u64));
        let mut noise_rng = tree.stream("noise", epoch as u64);
        let mut dropout_rng = tree.stream("dropout", epoch as u64);
        for &i in &order {
            let image = add_gaussian_noise(&train.image(i), cfg.noise.input_noise_var, &mut noise_rng);
            let target = supervised.then(|| {
                add_gaussian_noise(
                    &one_hot(train.label(i), net.layers[top].width()),
                    cfg.noise.target_noise_var,
                    &mut noise_rng,
                )
            });
            if !supervised {
                net.layers[top].mu.fill(0.0);
            }
            let dropout = (cfg.noise.prediction_dropout > 0.0).then(|| Dropout {
                rate: cfg.noise.prediction_dropout,
                rng: &mut dropout_rng,
            });
            let report = run_inference(net, &image, target.as_ref(), &cfg.schedule, &mut stepper, dropout)?;
            window.push(report.free_energy_settled);
            seen += 1;
            if window.len() == LOG_EVERY {
                trace.push(TraceRecord::new(seen, 0, Quantity::FreeEnergy, mean(&window)));
                window.clear();
                for (l, layer) in net.layers.iter().enumerate().filter(|(_, l)| !l.is_top()) {
                    let s = layer.sigma.mean().unwrap_or(f64::NAN);
                    trace.push(TraceRecord::new(seen, l, Quantity::Sigma, s));
                }
            }
        }
        after_epoch(epoch, net)?;
    }
    Ok(trace)
}

/// Clamps `image`, releases the top layer from zero and relaxes all free
/// layers for `iterations` steps. Dropout is never applied here.
pub fn infer_latent(net: &mut PcNetwork, image: &Array1<f64>, schedule: &Schedule, iterations: usize) -> Result<()> {
    let top = net.top_index();
    net.clear_perturbations();
    net.clamp(0, image)?;
    net.release(top)?;
    net.layers[top].mu.fill(0.0);
    net.initialize_top_down()?;
    settle(net, schedule, iterations)
}

pub fn argmax(v: &Array1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Runs `f` on a private copy of `net` for each of the first `n` samples of
/// `data`, in parallel chunks; results come back in sample order.
pub fn map_samples<T: Send>(
    net: &PcNetwork,
    n: usize,
    f: impl Fn(&mut PcNetwork, usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let indices: Vec<usize> = (0..n).collect();
    let chunks: Vec<Vec<T>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut local = net.clone();
            chunk.iter().map(|&i| f(&mut local, i)).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Fraction of the first `n` test images whose inferred top layer peaks at
/// the true label.
pub fn accuracy(net: &PcNetwork, test: &Dataset, n: usize, schedule: &Schedule, iterations: usize) -> Result<f64> {
    let top = net.top_index();
    let hits = map_samples(net, n, |local, i| {
        infer_latent(local, &test.image(i), schedule, iterations)?;
        Ok(argmax(&local.layers[top].mu) == test.label(i))
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / n.max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct ClassifyResult {
    pub accuracy: f64,
    pub untrained_accuracy: f64,
    pub epoch_accuracy: Vec<f64>,
    pub input_sigma_mean: f64,
    pub trace: Vec<TraceRecord>,
}

impl ClassifyResult {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("accuracy".to_string(), self.accuracy),
            ("untrained_accuracy".to_string(), self.untrained_accuracy),
            ("input_sigma_mean".to_string(), self.input_sigma_mean),
        ])
    }

    pub fn write(&self, out: &OutputDir) -> std::result::Result<(), ExperimentError> {
        out.write_traces("traces", &self.trace)?;
        Ok(())
    }
}

/// Trains with image and label clamped, then classifies test images by
/// inferring the label layer from the image alone.
pub fn classify(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<ClassifyResult> {
    let tree = SeedTree::new(cfg.seed);
    let mut net = build_network(cfg, &tree)?;
    let n_test = limit(test, cfg.run.test_samples);
    let iters = cfg.run.test_iterations;
    let untrained_accuracy = accuracy(&net, test, n_test, &cfg.schedule, iters)?;
    let mut epoch_accuracy = Vec::new();
    let mut trace = train_network(cfg, &tree, &mut net, train, true, |_, net| {
        epoch_accuracy.push(accuracy(net, test, n_test, &cfg.schedule, iters)?);
        Ok(())
    })?;
    for (e, &acc) in epoch_accuracy.iter().enumerate() {
        trace.push(TraceRecord::new(e as u64 + 1, net.top_index(), Quantity::Accuracy, acc));
    }
    Ok(ClassifyResult {
        accuracy: *epoch_accuracy.last().unwrap_or(&untrained_accuracy),
        untrained_accuracy,
        input_sigma_mean: net.layers[0].sigma.mean().unwrap_or(f64::NAN),
        epoch_accuracy,
        trace,
    })
}

fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|d| d * d).mean().unwrap_or(f64::NAN)
}

fn correlation(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (ma, mb) = (a.mean().unwrap_or(0.0), b.mean().unwrap_or(0.0));
    let (da, db) = (a.mapv(|x| x - ma), b.mapv(|x| x - mb));
    let denom = (da.dot(&da) * db.dot(&db)).sqrt();
    if denom > 0.0 {
        da.dot(&db) / denom
    } else {
        0.0
    }
}

/// Per-class mean images.
pub fn class_means(data: &Dataset, n: usize) -> Vec<Array1<f64>> {
    let mut sums = vec![Array1::<f64>::zeros(data.pixels_per_image()); CLASSES];
    let mut counts = [0usize; CLASSES];
    for i in 0..n {
        let c = data.label(i);
        sums[c] += &data.image(i);
        counts[c] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { s })
        .collect()
}

/// Input predicted from the label alone: label clamped, every lower layer
/// set by one top-down pass.
pub fn prior_prediction(net: &mut PcNetwork, label: &Array1<f64>) -> Result<Array1<f64>> {
    let top = net.top_index();
    net.clear_perturbations();
    net.clamp(top, label)?;
    net.release(0)?;
    net.initialize_top_down()?;
    net.prediction(0)
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub index: usize,
    pub label: usize,
    pub prior: Array1<f64>,
    pub posterior: Array1<f64>,
    pub prior_mse: f64,
    pub posterior_mse: f64,
}

#[derive(Clone, Debug)]
pub struct ReconstructResult {
    pub posterior_better_fraction: f64,
    pub prior_mse: f64,
    pub posterior_mse: f64,
    pub input_sigma_mean: f64,
    pub input_sigma: Array1<f64>,
    /// Fraction of classes whose prior image correlates best with that
    /// class's mean image.
    pub template_match: f64,
    pub class_priors: Vec<Array1<f64>>,
    pub examples: Vec<(Reconstruction, Array1<f64>)>,
    pub trace: Vec<TraceRecord>,
    pub dims: (usize, usize),
}

impl ReconstructResult {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("posterior_better_fraction".to_string(), self.posterior_better_fraction),
            ("prior_mse".to_string(), self.prior_mse),
            ("posterior_mse".to_string(), self.posterior_mse),
            ("input_sigma_mean".to_string(), self.input_sigma_mean),
            ("template_match".to_string(), self.template_match),
        ])
    }

    pub fn write(&self, out: &OutputDir) -> std::result::Result<(), ExperimentError> {
        let (rows, cols) = self.dims;
        out.write_traces("traces", &self.trace)?;
        for (r, image) in &self.examples {
            let stem = format!("images/{:05}_label{}", r.index, r.label);
            out.write_pgm(&format!("{stem}_input.pgm"), &image.to_vec(), rows, cols)?;
            out.write_pgm(&format!("{stem}_prior.pgm"), &r.prior.to_vec(), rows, cols)?;
            out.write_pgm(&format!("{stem}_posterior.pgm"), &r.posterior.to_vec(), rows, cols)?;
        }
        for (c, p) in self.class_priors.iter().enumerate() {
            out.write_pgm(&format!("images/prior_class{c}.pgm"), &p.to_vec(), rows, cols)?;
        }
        let sigma = super::output::normalize(&self.input_sigma.to_vec());
        out.write_pgm("images/input_sigma.pgm", &sigma, rows, cols)?;
        Ok(())
    }
}

/// Trains with image and label clamped, then compares the label-only prior
/// reconstruction of each test image with the posterior one obtained after
/// `t_activity` hidden updates driven by the true image.
pub fn reconstruct(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<ReconstructResult> {
    let tree = SeedTree::new(cfg.seed);
    let mut net = build_network(cfg, &tree)?;
    let mut trace = train_network(cfg, &tree, &mut net, train, true, |_, _| Ok(()))?;
    net.clear_perturbations();
    let top = net.top_index();
    let classes = net.layers[top].width();
    let n_test = limit(test, cfg.run.test_samples);
    let schedule = &cfg.schedule;

    let recs = map_samples(&net, n_test, |local, i| {
        let image = test.image(i);
        let label = test.label(i);
        let prior = prior_prediction(local, &one_hot(label, classes))?;
        local.clamp(0, &image)?;
        settle(local, schedule, schedule.t_activity)?;
        let posterior = local.prediction(0)?;
        Ok(Reconstruction {
            index: i,
            label,
            prior_mse: mse(&prior, &image),
            posterior_mse: mse(&posterior, &image),
            prior,
            posterior,
        })
    })?;
    let better = recs.iter().filter(|r| r.posterior_mse < r.prior_mse).count();

    let means = class_means(train, limit(train, cfg.run.train_samples));
    let mut scratch = net.clone();
    let class_priors: Vec<Array1<f64>> = (0..classes)
        .map(|c| prior_prediction(&mut scratch, &one_hot(c, classes)))
        .collect::<Result<_>>()?;
    let matched = class_priors
        .iter()
        .enumerate()
        .filter(|(c, p)| {
            let scores: Array1<f64> = means.iter().map(|m| correlation(p, m)).collect();
            argmax(&scores) == *c
        })
        .count();

    let input_sigma = net.layers[0].sigma.clone();
    let final_step = (cfg.run.epochs * limit(train, cfg.run.train_samples)) as u64;
    for (l, layer) in net.layers.iter().enumerate().filter(|(_, l)| !l.is_top()) {
        let s = layer.sigma.mean().unwrap_or(f64::NAN);
        trace.push(TraceRecord::new(final_step, l, Quantity::Sigma, s));
    }
    let prior_mse = mean(&recs.iter().map(|r| r.prior_mse).collect::<Vec<_>>());
    let posterior_mse = mean(&recs.iter().map(|r| r.posterior_mse).collect::<Vec<_>>());
    trace.push(TraceRecord::new(final_step, 0, Quantity::PriorMse, prior_mse));
    trace.push(TraceRecord::new(final_step, 0, Quantity::PosteriorMse, posterior_mse));
    let examples = recs
        .iter()
        .take(cfg.run.image_dumps)
        .map(|r| (r.clone(), test.image(r.index)))
        .collect();
    Ok(ReconstructResult {
        posterior_better_fraction: better as f64 / n_test.max(1) as f64,
        prior_mse,
        posterior_mse,
        input_sigma_mean: input_sigma.mean().unwrap_or(f64::NAN),
        input_sigma,
        template_match: matched as f64 / classes as f64,
        class_priors,
        examples,
        trace,
        dims: test.dims(),
    })
}
