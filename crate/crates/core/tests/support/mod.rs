//! Shared helpers for integration tests: independent oracles and random
//! instance generators.
#![allow(dead_code)]

use modeconn::data::{LabeledDataset, Targets};
use modeconn::dropout::{derive_seed, rng_from_seed, DropoutMask};
use modeconn::linalg::Matrix;
use modeconn::net::Network;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Weights uniform in `±1/√fan_in`.
pub fn random_network(rng: &mut ChaCha8Rng, dims: &[usize]) -> Network {
    let weights = dims
        .windows(2)
        .map(|w| random_matrix(rng, w[1], w[0], 1.0 / (w[0] as f64).sqrt()))
        .collect();
    Network::new(weights).unwrap()
}

/// Depth 3 or 4, hidden widths in `lo..=hi`.
pub fn random_dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<usize> {
    let depth = rng.random_range(3..=4);
    let mut dims = vec![rng.random_range(2..=6)];
    for _ in 1..depth {
        dims.push(rng.random_range(lo..=hi));
    }
    dims.push(rng.random_range(1..=3));
    dims
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

pub fn regression_data(rng: &mut ChaCha8Rng, n: usize, input: usize, output: usize) -> LabeledDataset {
    let x = random_matrix(rng, n, input, 2.0);
    let y = random_matrix(rng, n, output, 1.0);
    LabeledDataset::new(x, Targets::Values(y), "random").unwrap()
}

pub fn classification_data(rng: &mut ChaCha8Rng, n: usize, input: usize, classes: usize) -> LabeledDataset {
    let x = random_matrix(rng, n, input, 2.0);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledDataset::new(x, Targets::Labels { labels, classes }, "random").unwrap()
}

/// Keeps `⌊h/2⌋` units per hidden layer with a random factor in `[1, 3]`.
pub fn half_mask(rng: &mut ChaCha8Rng, net: &Network) -> DropoutMask {
    let widths = net.hidden_widths();
    let keep: Vec<usize> = widths.iter().map(|h| h / 2).collect();
    let rescale: Vec<f64> = widths.iter().map(|_| rng.random_range(1.0..3.0)).collect();
    DropoutMask::sample(&widths, &keep, &rescale, derive_seed(rng.random(), 0)).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let n = sym.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| sym.row(r).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        let diag: f64 = (0..n).map(|p| a[p][p] * a[p][p]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|p| a[p][p]).collect()
}

/// `sqrt(λ_max(AᵀA))`, using whichever Gram matrix is smaller.
pub fn spectral_norm_oracle(a: &Matrix) -> f64 {
    let g = if a.rows() < a.cols() {
        a.matmul(&a.transpose()).unwrap()
    } else {
        a.transpose().matmul(a).unwrap()
    };
    jacobi_eigenvalues(&g).into_iter().fold(0.0, f64::max).sqrt()
}

/// Central difference of `f` in coordinate `(layer, r, c)` with step `h`.
pub fn central_difference(net: &Network, layer: usize, r: usize, c: usize, h: f64, f: impl Fn(&Network) -> f64) -> f64 {
    let shifted = |delta: f64| {
        let mut w = net.weights().to_vec();
        let v = w[layer].get(r, c);
        w[layer].set(r, c, v + delta);
        f(&Network::new(w).unwrap())
    };
    (shifted(h) - shifted(-h)) / (2.0 * h)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}
