//! Minibatch SGD with backprop for the bias-free ReLU MLP, synthetic
//! teacher data and IDX ingestion.

mod idx;
mod teacher;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Targets};
use crate::dropout::{algorithm1_dropout_columns, derive_seed, rng_from_seed};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{matvec_slice, relu, transpose_matvec_slice, Matrix};
use crate::net::{log_sum_exp, sample_loss, LossKind, Network};

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use teacher::{make_teacher_student_data, make_teacher_student_data_with};

/// Samples per parallel chunk when accumulating gradients. Fixed so the
/// summation order does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub lr: f64,
    /// Step `t` uses `lr (1 - decay)^t`.
    pub decay: f64,
    pub batch: usize,
    pub iterations: usize,
    pub momentum: f64,
    /// Dropout probability on the output of each hidden layer; empty or all
    /// zero disables dropout.
    pub dropout: Vec<f64>,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn new(dims: Vec<usize>, loss: LossKind, seed: u64) -> Self {
        TrainConfig {
            dims,
            lr: 0.1,
            decay: 1e-6,
            batch: 64,
            iterations: 5000,
            momentum: 0.0,
            dropout: Vec::new(),
            seed,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 || self.dims.contains(&0) {
            return dim_err(format!("invalid architecture {:?}", self.dims));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg_err(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return arg_err(format!("decay must lie in [0, 1), got {}", self.decay));
        }
        if self.batch == 0 {
            return arg_err("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return arg_err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        let hidden = self.dims.len() - 2;
        if !self.dropout.is_empty() && self.dropout.len() != hidden {
            return dim_err(format!(
                "{} dropout rates for {hidden} hidden layers",
                self.dropout.len()
            ));
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return arg_err(format!("dropout probability must lie in [0, 1), got {p}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Network,
    /// Minibatch loss before each step.
    pub history: Vec<f64>,
}

/// Uniform in `±√(6 / (fan_in + fan_out))` per layer.
pub fn glorot_init(dims: &[usize], seed: u64) -> Result<Network> {
    if dims.len() < 3 || dims.contains(&0) {
        return dim_err(format!("invalid architecture {dims:?}"));
    }
    let mut rng = rng_from_seed(seed);
    let weights = dims
        .windows(2)
        .map(|w| {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            Matrix::from_vec_unchecked(w[1], w[0], data)
        })
        .collect();
    Network::new(weights)
}

/// `∂l/∂ŷ` for one sample.
fn output_grad(kind: LossKind, targets: &Targets, i: usize, out: &[f64]) -> Vec<f64> {
    match (kind, targets) {
        (LossKind::Squared, Targets::Values(y)) => out.iter().zip(y.row(i)).map(|(o, t)| 2.0 * (o - t)).collect(),
        (LossKind::Squared, Targets::Labels { labels, .. }) => out
            .iter()
            .enumerate()
            .map(|(c, o)| 2.0 * (o - if c == labels[i] { 1.0 } else { 0.0 }))
            .collect(),
        (LossKind::SoftmaxCrossEntropy, Targets::Labels { labels, .. }) => {
            let lse = log_sum_exp(out);
            out.iter()
                .enumerate()
                .map(|(c, o)| (o - lse).exp() - if c == labels[i] { 1.0 } else { 0.0 })
                .collect()
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Values(y)) => {
            let lse = log_sum_exp(out);
            let mass: f64 = y.row(i).iter().sum();
            out.iter()
                .zip(y.row(i))
                .map(|(o, t)| (o - lse).exp() * mass - t)
                .collect()
        }
    }
}

/// Adds sample `i`'s loss gradient into `grads` and returns its loss.
fn accumulate(net: &Network, data: &LabeledDataset, kind: LossKind, i: usize, grads: &mut [Matrix]) -> f64 {
    let d = net.depth();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(d);
    acts.push(data.input(i).to_vec());
    for k in 1..=d {
        let z = matvec_slice(net.layer(k), &acts[k - 1]);
        if k < d {
            acts.push(z.iter().map(|&v| relu(v)).collect());
        }
        pre.push(z);
    }
    let out = &pre[d - 1];
    let l = sample_loss(kind, data.targets(), i, out);
    let mut delta = output_grad(kind, data.targets(), i, out);
    for k in (1..=d).rev() {
        let g = &mut grads[k - 1];
        let cols = g.cols();
        let a = &acts[k - 1];
        for (r, &dr) in delta.iter().enumerate() {
            if dr != 0.0 {
                let row = &mut g.row_mut(r)[..cols];
                for (gv, &av) in row.iter_mut().zip(a) {
                    *gv += dr * av;
                }
            }
        }
        if k > 1 {
            let mut back = transpose_matvec_slice(net.layer(k), &delta);
            for (b, &z) in back.iter_mut().zip(&pre[k - 2]) {
                if z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    l
}

/// Mean loss over `indices` and its gradient with respect to every weight
/// matrix. The ReLU derivative at zero is 0.
pub fn loss_and_gradient(
    net: &Network,
    data: &LabeledDataset,
    kind: LossKind,
    indices: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    if indices.is_empty() {
        return arg_err("gradient over an empty batch");
    }
    if data.input_dim() != net.input_dim() || data.output_dim() != net.output_dim() {
        return dim_err(format!(
            "dataset is {}->{}, network is {}->{}",
            data.input_dim(),
            data.output_dim(),
            net.input_dim(),
            net.output_dim()
        ));
    }
    let zeros = || -> Vec<Matrix> {
        net.weights()
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect()
    };
    let partial: Vec<(f64, Vec<Matrix>)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = zeros();
            let mut l = 0.0;
            for &i in chunk {
                l += accumulate(net, data, kind, i, &mut g);
            }
            (l, g)
        })
        .collect();
    let mut grads = zeros();
    let mut total = 0.0;
    for (l, g) in partial {
        total += l;
        for (acc, part) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(part.as_slice()) {
                *a += b;
            }
        }
    }
    let inv = 1.0 / indices.len() as f64;
    for g in &mut grads {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((total * inv, grads))
}

/// Trains from a Glorot initialization. Batches walk through a fresh shuffle
/// of the data each epoch. With dropout, every step draws fresh column
/// masks for `A_2 … A_d` (column `u` of `A_{i+1}` carries hidden unit `u` of
/// layer `i`) and backpropagates through the masked weights.
pub fn sgd_train(cfg: &TrainConfig, data: &LabeledDataset) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return arg_err("training set is empty");
    }
    if data.input_dim() != cfg.dims[0] || data.output_dim() != *cfg.dims.last().expect("validated") {
        return dim_err(format!(
            "dataset is {}->{}, architecture is {:?}",
            data.input_dim(),
            data.output_dim(),
            cfg.dims
        ));
    }
    let mut net = glorot_init(&cfg.dims, derive_seed(cfg.seed, 0))?;
    let mut order_rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let dropout_seed = derive_seed(cfg.seed, 2);
    let use_dropout = cfg.dropout.iter().any(|&p| p > 0.0);
    let n = data.len();
    let batch = cfg.batch.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut velocity: Vec<Matrix> = net
        .weights()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut lr = cfg.lr;

    for it in 0..cfg.iterations {
        if cursor + batch > n {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;

        let (l, grads) = if use_dropout {
            let step_seed = derive_seed(dropout_seed, it as u64);
            let mut masked = net.clone();
            let mut scales: Vec<Option<Vec<f64>>> = vec![None; net.depth()];
            for (hl, &p) in cfg.dropout.iter().enumerate() {
                if p > 0.0 {
                    let k = hl + 2;
                    let (m, kept) = algorithm1_dropout_columns(net.layer(k), p, derive_seed(step_seed, k as u64))?;
                    masked.weights_mut()[k - 1] = m;
                    scales[k - 1] = Some(kept.iter().map(|&on| if on { 1.0 / (1.0 - p) } else { 0.0 }).collect());
                }
            }
            let (l, mut g) = loss_and_gradient(&masked, data, cfg.loss, idx)?;
            for (gm, s) in g.iter_mut().zip(&scales) {
                if let Some(s) = s {
                    for r in 0..gm.rows() {
                        for (v, f) in gm.row_mut(r).iter_mut().zip(s) {
                            *v *= f;
                        }
                    }
                }
            }
            (l, g)
        } else {
            loss_and_gradient(&net, data, cfg.loss, idx)?
        };
        history.push(l);
        if !l.is_finite() || grads.iter().any(|g| g.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { iteration: it, history });
        }

        let weights = net.weights_mut();
        if cfg.momentum == 0.0 {
            for (w, g) in weights.iter_mut().zip(&grads) {
                for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *wv -= lr * gv;
                }
            }
        } else {
            for ((w, g), v) in weights.iter_mut().zip(&grads).zip(&mut velocity) {
                for ((wv, gv), vv) in w
                    .as_mut_slice()
                    .iter_mut()
                    .zip(g.as_slice().iter())
                    .zip(v.as_mut_slice())
                {
                    *vv = cfg.momentum * *vv - lr * gv;
                    *wv += *vv;
                }
            }
        }
        if weights.iter().any(|w| w.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { iteration: it, history });
        }
        lr *= 1.0 - cfg.decay;
    }
    Ok(Trained { net, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::loss;

    fn separable(n: usize) -> LabeledDataset {
        let mut rng = rng_from_seed(11);
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let c = usize::from(a + b > 0.0);
            let shift = if c == 1 { 0.3 } else { -0.3 };
            xs.push(vec![a + shift, b + shift]);
            labels.push(c);
        }
        LabeledDataset::new(
            Matrix::from_rows(&xs).unwrap(),
            Targets::Labels { labels, classes: 2 },
            "separable",
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_returns_init() {
        let data = separable(20);
        let mut cfg = TrainConfig::new(vec![2, 8, 2], LossKind::SoftmaxCrossEntropy, 4);
        cfg.iterations = 0;
        let t = sgd_train(&cfg, &data).unwrap();
        assert_eq!(t.net, glorot_init(&cfg.dims, derive_seed(4, 0)).unwrap());
        assert!(t.history.is_empty());
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable(400);
        let mut cfg = TrainConfig::new(vec![2, 16, 2], LossKind::SoftmaxCrossEntropy, 1);
        cfg.iterations = 2000;
        let t = sgd_train(&cfg, &data).unwrap();
        let eval = loss(LossKind::SoftmaxCrossEntropy, &t.net, &data).unwrap();
        assert!(eval.loss < 0.1, "loss {}", eval.loss);
        let again = sgd_train(&cfg, &data).unwrap();
        assert_eq!(t.net, again.net);
    }

    #[test]
    fn zero_dropout_matches_plain() {
        let data = separable(50);
        let mut cfg = TrainConfig::new(vec![2, 6, 6, 2], LossKind::SoftmaxCrossEntropy, 2);
        cfg.iterations = 30;
        let plain = sgd_train(&cfg, &data).unwrap();
        cfg.dropout = vec![0.0, 0.0];
        assert_eq!(sgd_train(&cfg, &data).unwrap().net, plain.net);
        cfg.dropout = vec![0.5, 0.0];
        assert_ne!(sgd_train(&cfg, &data).unwrap().net, plain.net);
    }

    #[test]
    fn divergence_reports_history() {
        let data = separable(50);
        let mut cfg = TrainConfig::new(vec![2, 16, 2], LossKind::Squared, 2);
        cfg.lr = 5.0;
        cfg.iterations = 300;
        match sgd_train(&cfg, &data) {
            Err(Error::Diverged { iteration, history }) => assert_eq!(history.len(), iteration + 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let data = separable(10);
        let mut cfg = TrainConfig::new(vec![2, 0, 2], LossKind::Squared, 0);
        assert!(sgd_train(&cfg, &data).is_err());
        cfg.dims = vec![2, 4, 2];
        cfg.lr = 0.0;
        assert!(matches!(sgd_train(&cfg, &data), Err(Error::InvalidArgument(_))));
    }
}
