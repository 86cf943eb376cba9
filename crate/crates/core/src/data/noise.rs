use std::f64::consts::PI;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PcnError, Result};

/// Additive Gaussian noise on inputs and targets plus prediction dropout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub input_noise_var: f64,
    pub target_noise_var: f64,
    pub prediction_dropout: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.input_noise_var >= 0.0) || !(self.target_noise_var >= 0.0) {
            return Err(PcnError::InvalidArgument(
                "noise variances must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.prediction_dropout) {
            return Err(PcnError::InvalidArgument(format!(
                "prediction_dropout must lie in [0, 1), got {}",
                self.prediction_dropout
            )));
        }
        Ok(())
    }
}

/// Derives independent, named RNG streams from one root seed.
///
/// `stream("init", 0)` and `stream("noise", 0)` never overlap, and the same
/// `(root, name, index)` always yields the same sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.root ^ fnv1a(name)));
        rng.set_stream(index);
        rng
    }

    /// A child tree, e.g. one per experiment seed.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        SeedTree::new(splitmix64(
            splitmix64(self.root ^ fnv1a(name)).wrapping_add(index),
        ))
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One standard normal draw via the Box–Muller transform.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - U keeps the argument of ln in (0, 1].
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `x + n` with `n ~ N(0, variance)` i.i.d. per element.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    x: &Array1<f64>,
    variance: f64,
    rng: &mut R,
) -> Array1<f64> {
    if variance == 0.0 {
        return x.clone();
    }
    let sd = variance.sqrt();
    x.mapv(|v| v + sd * standard_normal(rng))
}

/// Inverted dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Array1<f64> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return Array1::ones(len);
    }
    let keep = 1.0 / (1.0 - rate);
    Array1::from_shape_fn(len, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// `n` scalar observations `mean + N(0, variance)`.
pub fn constant_signal_stream<R: Rng + ?Sized>(
    mean: f64,
    variance: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let sd = variance.sqrt();
    (0..n)
        .map(|_| {
            if variance == 0.0 {
                mean
            } else {
                mean + sd * standard_normal(rng)
            }
        })
        .collect()
}

pub fn one_hot(class: usize, classes: usize) -> Array1<f64> {
    let mut v = Array1::zeros(classes);
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_variance_noise_is_identity() {
        let x = Array1::from(vec![0.1, -3.0, 7.25]);
        let mut rng = SeedTree::new(1).stream("noise", 0);
        assert_eq!(add_gaussian_noise(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn gaussian_noise_variance_band() {
        let mut rng = SeedTree::new(2).stream("noise", 0);
        let x = Array1::zeros(100_000);
        let y = add_gaussian_noise(&x, 10.0, &mut rng);
        let (_, var) = sample_var(y.as_slice().unwrap());
        assert!((9.7..=10.3).contains(&var), "var = {var}");
    }

    #[test]
    fn same_seed_same_noise() {
        let x = Array1::zeros(64);
        let a = add_gaussian_noise(&x, 2.0, &mut SeedTree::new(9).stream("n", 3));
        let b = add_gaussian_noise(&x, 2.0, &mut SeedTree::new(9).stream("n", 3));
        let c = add_gaussian_noise(&x, 2.0, &mut SeedTree::new(9).stream("n", 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn named_streams_differ() {
        let tree = SeedTree::new(5);
        let a: u64 = tree.stream("init", 0).random();
        let b: u64 = tree.stream("data", 0).random();
        assert_ne!(a, b);
        assert_ne!(tree.child("seed", 0), tree.child("seed", 1));
    }

    #[test]
    fn dropout_examples() {
        let mut rng = SeedTree::new(3).stream("dropout", 0);
        assert!(dropout_mask(50, 0.0, &mut rng).iter().all(|&m| m == 1.0));

        let mask = dropout_mask(100_000, 0.3, &mut rng);
        let zeros = mask.iter().filter(|&&m| m == 0.0).count() as f64 / 100_000.0;
        assert!((0.295..=0.305).contains(&zeros), "zero fraction {zeros}");
        let mean = mask.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn constant_stream_moments() {
        let mut rng = SeedTree::new(4).stream("signal", 0);
        let xs = constant_signal_stream(5.0, 2.0, 10_000, &mut rng);
        let (mean, var) = sample_var(&xs);
        assert!((mean - 5.0).abs() < 0.05, "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "var {var}");

        let flat = constant_signal_stream(1.5, 0.0, 20, &mut rng);
        assert!(flat.iter().all(|&x| x == 1.5));
    }

    #[test]
    fn one_hot_three() {
        assert_eq!(
            one_hot(3, 10).to_vec(),
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn noise_spec_validation() {
        let mut spec = NoiseSpec::default();
        assert!(spec.validate().is_ok());
        spec.prediction_dropout = 1.0;
        assert!(spec.validate().is_err());
        spec.prediction_dropout = 0.3;
        spec.input_noise_var = -1.0;
        assert!(spec.validate().is_err());
    }
}
