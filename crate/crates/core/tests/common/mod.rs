//! Helpers shared by the integration tests: random networks, reference
//! oracles and the desk-scale two-moons protocol.

#![allow(dead_code)]

pub mod gradcheck;
pub mod pruning;

use rand::Rng;
use srl_core::config::ExperimentConfig;
use srl_core::data::{Dataset, Example};
use srl_core::experiment::initial_network;
use srl_core::linalg::Matrix;
use srl_core::net::{Mask, MaskLayer, Network};
use srl_core::rng::Rng as ChaCha;

/// Widths in `1..=max_width` (inputs and classes at least 2), `1..=max_depth` weight matrices.
pub fn random_dims(rng: &mut ChaCha, max_width: usize, max_depth: usize) -> Vec<usize> {
    let depth = rng.random_range(1..=max_depth);
    let mut dims = vec![rng.random_range(2..=max_width)];
    for _ in 1..depth {
        dims.push(rng.random_range(1..=max_width));
    }
    dims.push(rng.random_range(2..=max_width));
    dims
}

/// He-uniform weights with scaling factors drawn from `[0.5, 1.5]`.
pub fn random_net(rng: &mut ChaCha, dims: &[usize]) -> Network {
    let mut net = Network::he_uniform(dims, rng).unwrap();
    for g in net.scaling_mut().iter_mut().flatten() {
        *g = rng.random_range(0.5..1.5);
    }
    net
}

pub fn random_vec(rng: &mut ChaCha, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Each weight survives with probability `keep`; every layer keeps at least one weight.
pub fn random_mask(rng: &mut ChaCha, net: &Network, keep: f64) -> Mask {
    let layers = net
        .weights()
        .iter()
        .map(|w| {
            let mut bits: Vec<bool> = (0..w.rows() * w.cols())
                .map(|_| rng.random_bool(keep))
                .collect();
            if !bits.iter().any(|&b| b) {
                bits[0] = true;
            }
            MaskLayer::from_bits(w.rows(), w.cols(), bits).unwrap()
        })
        .collect();
    Mask::from_layers(layers)
}

pub fn random_matrix(rng: &mut ChaCha, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (xp, xq) = (row[p], row[q]);
                    row[p] = c * xp - s * xq;
                    row[q] = s * xp + c * xq;
                }
                let (top, bottom) = m.split_at_mut(q);
                for (a, b) in top[p].iter_mut().zip(bottom[0].iter_mut()) {
                    let (xp, xq) = (*a, *b);
                    *a = c * xp - s * xq;
                    *b = s * xp + c * xq;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Largest singular value via the Jacobi spectrum of `WᵀW`.
pub fn spectral_oracle(w: &Matrix) -> f64 {
    let gram = w.transpose().matmul(w).unwrap();
    jacobi_eigenvalues(&gram)
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt()
}

/// Harness-default configuration plus one seed's dataset, splits and initialization.
pub struct Protocol {
    pub cfg: ExperimentConfig,
    pub dataset: Dataset,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub theta0: Network,
}

pub fn protocol(seed: u64) -> Protocol {
    protocol_with(ExperimentConfig::default(), seed)
}

pub fn protocol_with(cfg: ExperimentConfig, seed: u64) -> Protocol {
    let dataset = cfg.dataset.build(seed).unwrap();
    let theta0 = initial_network(&cfg.net.dims, seed).unwrap();
    Protocol {
        train: dataset.train(),
        val: dataset.val(),
        test: dataset.test(),
        cfg,
        dataset,
        theta0,
    }
}
