#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pcn::Activation;

/// MNIST directory from `PCN_MNIST_DIR`, else `data/mnist` at the workspace
/// root, if it holds the four IDX files.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("PCN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let files = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];
    files.iter().all(|f| dir.join(f).is_file()).then_some(dir)
}

/// Plain predictive coding with unit variances, written without any notion
/// of precision. Mirrors the operation order of the library so results can
/// be compared bit for bit.
#[derive(Clone, Debug)]
pub struct PlainPc {
    pub mu: Vec<Array1<f64>>,
    pub theta: Vec<Array2<f64>>,
    pub act: Vec<Activation>,
    pub clamped: Vec<bool>,
    pre: Vec<Array1<f64>>,
    eps: Vec<Array1<f64>>,
}

impl PlainPc {
    pub fn new(mu: Vec<Array1<f64>>, theta: Vec<Array2<f64>>, act: Vec<Activation>) -> Self {
        let depth = mu.len();
        Self {
            mu,
            theta,
            act,
            clamped: vec![false; depth],
            pre: Vec::new(),
            eps: Vec::new(),
        }
    }

    fn top(&self) -> usize {
        self.mu.len() - 1
    }

    fn errors(&mut self) {
        self.pre.clear();
        self.eps.clear();
        for l in 0..self.top() {
            let pre = self.theta[l].dot(&self.mu[l + 1]);
            let f = self.act[l];
            let pred = pre.mapv(|x| f.apply(x));
            self.eps.push(&self.mu[l] - &pred);
            self.pre.push(pre);
        }
    }

    fn signal(&self, l: usize) -> Array1<f64> {
        let f = self.act[l];
        let mut s = self.eps[l].clone();
        ndarray::Zip::from(&mut s)
            .and(&self.pre[l])
            .for_each(|s, &a| *s *= f.derivative(a));
        s
    }

    /// One sample: clamp, top-down initialization, `t` relaxation steps and
    /// one gradient step on the weights.
    pub fn sample(
        &mut self,
        obs: &Array1<f64>,
        target: Option<&Array1<f64>>,
        t: usize,
        eta_mu: f64,
        eta_theta: f64,
    ) {
        let top = self.top();
        self.mu[0].assign(obs);
        self.clamped[0] = true;
        match target {
            Some(v) => {
                self.mu[top].assign(v);
                self.clamped[top] = true;
            }
            None => self.clamped[top] = false,
        }
        for l in (0..top).rev() {
            if !self.clamped[l] {
                let f = self.act[l];
                self.mu[l] = self.theta[l].dot(&self.mu[l + 1]).mapv(|x| f.apply(x));
            }
        }
        self.errors();
        for _ in 0..t {
            let mut steps = Vec::new();
            for l in 0..=top {
                if self.clamped[l] {
                    continue;
                }
                let mut g = Array1::<f64>::zeros(self.mu[l].len());
                if l > 0 {
                    let s = self.signal(l - 1);
                    let mut back = Array1::<f64>::zeros(self.mu[l].len());
                    for (row, &si) in self.theta[l - 1].rows().into_iter().zip(&s) {
                        if si != 0.0 {
                            back.scaled_add(si, &row);
                        }
                    }
                    g += &back;
                }
                if l < top {
                    g -= &self.eps[l];
                }
                steps.push((l, g));
            }
            for (l, g) in steps {
                self.mu[l].scaled_add(eta_mu, &g);
            }
            self.errors();
        }
        for l in 0..top {
            let s = self.signal(l);
            let above = self.mu[l + 1].clone();
            for (mut row, &si) in self.theta[l].rows_mut().into_iter().zip(&s) {
                let c = eta_theta * si;
                if c != 0.0 {
                    row.scaled_add(c, &above);
                }
            }
        }
    }
}

pub fn bits(v: &Array1<f64>) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn bits2(m: &Array2<f64>) -> Vec<u64> {
    m.iter().map(|x| x.to_bits()).collect()
}
