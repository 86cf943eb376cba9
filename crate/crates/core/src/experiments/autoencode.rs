//! Unsupervised hierarchical auto-encoding of MNIST: the top layer is a
//! latent inferred per image, and every hidden layer can decode to pixels.

use std::collections::BTreeMap;

use ndarray::Array1;

use super::mnist::{infer_latent, limit, map_samples, train_network};
use super::{mean, ExperimentError, OutputDir};
use crate::cli::config::ExperimentConfig;
use crate::data::{Dataset, SeedTree};
use crate::error::Result;
use crate::pc_core::{predict, PcNetwork};
use crate::trace::{Quantity, TraceRecord};

/// Pixels generated from layer `k`'s activities by chaining the top-down
/// predictions down to the input.
pub fn decode_from(net: &PcNetwork, k: usize, mu: &Array1<f64>) -> Result<Array1<f64>> {
    let mut v = mu.clone();
    for l in (0..k).rev() {
        let layer = &net.layers[l];
        let theta = layer.theta.as_ref().expect("layers below the top have weights");
        v = predict(&v, theta, layer.activation)?;
    }
    Ok(v)
}

/// Leave-one-out k-nearest-neighbor accuracy under Euclidean distance with
/// majority vote; ties go to the class whose nearest member is closest.
pub fn knn_accuracy(embeddings: &[Array1<f64>], labels: &[usize], k: usize) -> f64 {
    let n = embeddings.len();
    if n < 2 {
        return 0.0;
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut hits = 0;
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dists.clear();
        for j in (0..n).filter(|&j| j != i) {
            let d = (&embeddings[i] - &embeddings[j]).mapv(|x| x * x).sum();
            dists.push((d, j));
        }
        let kk = k.min(dists.len());
        dists.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &mut dists[..kk];
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; classes];
        for &(_, j) in near.iter() {
            votes[labels[j]] += 1;
        }
        let best = *votes.iter().max().unwrap_or(&0);
        let predicted = near
            .iter()
            .map(|&(_, j)| labels[j])
            .find(|&c| votes[c] == best)
            .unwrap_or(0);
        if predicted == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

#[derive(Clone, Debug)]
pub struct AutoencodeResult {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// Settled top-layer activities per test image.
    pub embeddings: Vec<Array1<f64>>,
    pub knn_k: usize,
    pub knn_accuracy: f64,
    /// Test MSE of decoding from layer `k`, for `k = 1..depth`.
    pub decode_mse: Vec<f64>,
    /// Test MSE of predicting every image by the training mean image.
    pub mean_image_mse: f64,
    pub trace: Vec<TraceRecord>,
    pub examples: Vec<(usize, Array1<f64>, Vec<Array1<f64>>)>,
    pub dims: (usize, usize),
}

impl AutoencodeResult {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::from([
            (format!("knn{}_accuracy", self.knn_k), self.knn_accuracy),
            ("mean_image_mse".to_string(), self.mean_image_mse),
        ]);
        for (k, &v) in self.decode_mse.iter().enumerate() {
            m.insert(format!("decode_mse_layer{}", k + 1), v);
        }
        m
    }

    pub fn write(&self, out: &OutputDir) -> std::result::Result<(), ExperimentError> {
        out.write_traces("traces", &self.trace)?;
        out.write_embeddings("embeddings.csv", &self.indices, &self.labels, &self.embeddings)?;
        let (rows, cols) = self.dims;
        for (i, image, decodes) in &self.examples {
            out.write_pgm(&format!("images/{i:05}_input.pgm"), &image.to_vec(), rows, cols)?;
            for (k, d) in decodes.iter().enumerate() {
                out.write_pgm(&format!("images/{i:05}_decode_layer{}.pgm", k + 1), &d.to_vec(), rows, cols)?;
            }
        }
        Ok(())
    }
}

/// Trains without labels, then embeds each test image by settling the free
/// layers with the image clamped, and decodes from every hidden layer.
pub fn autoencode(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<AutoencodeResult> {
    let tree = SeedTree::new(cfg.seed);
    let arch = &cfg.architecture;
    let mut net = PcNetwork::new(&arch.widths, &arch.activations, &mut tree.stream("init", 0))?;
    let mut trace = train_network(cfg, &tree, &mut net, train, false, |_, _| Ok(()))?;
    net.clear_perturbations();
    let depth = net.depth();
    let n_test = limit(test, cfg.run.test_samples);
    let iters = cfg.run.test_iterations;

    // (embedding, per-layer decodes, per-layer mse)
    let settled = map_samples(&net, n_test, |local, i| {
        let image = test.image(i);
        infer_latent(local, &image, &cfg.schedule, iters)?;
        let decodes = (1..depth)
            .map(|k| decode_from(local, k, &local.layers[k].mu))
            .collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = decodes
            .iter()
            .map(|d| (d - &image).mapv(|x| x * x).mean().unwrap_or(f64::NAN))
            .collect();
        Ok((local.layers[depth - 1].mu.clone(), decodes, errors))
    })?;

    let decode_mse: Vec<f64> = (0..depth - 1)
        .map(|k| mean(&settled.iter().map(|s| s.2[k]).collect::<Vec<_>>()))
        .collect();
    let mean_image = train.take(limit(train, cfg.run.train_samples)).mean_image();
    let mean_image_mse = mean(
        &(0..n_test)
            .map(|i| (&test.image(i) - &mean_image).mapv(|x| x * x).mean().unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
    );
    let labels: Vec<usize> = (0..n_test).map(|i| test.label(i)).collect();
    let embeddings: Vec<Array1<f64>> = settled.iter().map(|s| s.0.clone()).collect();
    let knn = knn_accuracy(&embeddings, &labels, cfg.run.knn_k);
    let step = (cfg.run.epochs * limit(train, cfg.run.train_samples)) as u64;
    trace.push(TraceRecord::new(step, depth - 1, Quantity::KnnAccuracy, knn));
    for (k, &v) in decode_mse.iter().enumerate() {
        trace.push(TraceRecord::new(step, k + 1, Quantity::Mse, v));
    }
    let examples = settled
        .iter()
        .take(cfg.run.image_dumps)
        .enumerate()
        .map(|(i, s)| (i, test.image(i), s.1.clone()))
        .collect();
    Ok(AutoencodeResult {
        indices: (0..n_test).collect(),
        labels,
        embeddings,
        knn_k: cfg.run.knn_k,
        knn_accuracy: knn,
        decode_mse,
        mean_image_mse,
        trace,
        examples,
        dims: test.dims(),
    })
}
