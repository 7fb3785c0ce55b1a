//! Bias-free fully-connected ReLU networks `x^i = A_i φ(x^{i-1})`, `x^1 = A_1 x^0`.
//!
//! Layers are numbered from 1 to `d` in the public API, so `A_i` is
//! `weights()[i - 1]` and the hidden layers are `1..d`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Targets};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{matvec_slice, relu, Matrix, Vector};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct Network {
    weights: Vec<Matrix>,
}

/// On-disk model format: `{"dims": [h_0, …, h_d], "weights": [row-major arrays]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        if file.dims.len() != file.weights.len() + 1 {
            return dim_err(format!(
                "{} dims describe {} layers but {} weight arrays given",
                file.dims.len(),
                file.dims.len().saturating_sub(1),
                file.weights.len()
            ));
        }
        let weights = file
            .weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| Matrix::new(file.dims[i + 1], file.dims[i], w))
            .collect::<Result<Vec<_>>>()?;
        Network::new(weights)
    }
}

impl From<Network> for NetworkFile {
    fn from(net: Network) -> Self {
        NetworkFile {
            dims: net.dims(),
            weights: net.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Network{:?}", self.dims())
    }
}

impl Network {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.len() < 2 {
            return arg_err(format!("network needs at least 2 layers, got {}", weights.len()));
        }
        for i in 1..weights.len() {
            if weights[i].cols() != weights[i - 1].rows() {
                return dim_err(format!(
                    "layer {} has {} inputs but layer {} has {} outputs",
                    i + 1,
                    weights[i].cols(),
                    i,
                    weights[i - 1].rows()
                ));
            }
        }
        if weights.iter().any(|w| w.rows() == 0 || w.cols() == 0) {
            return arg_err("layer widths must be positive");
        }
        Ok(Network { weights })
    }

    /// Constructor for weights already known to chain correctly.
    pub(crate) fn from_weights_unchecked(weights: Vec<Matrix>) -> Self {
        debug_assert!(Network::new(weights.clone()).is_ok());
        Network { weights }
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Network::new(dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect())
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<Matrix> {
        self.weights
    }

    /// `A_i`, 1-based.
    pub fn layer(&self, i: usize) -> &Matrix {
        &self.weights[i - 1]
    }

    /// `[h_0, h_1, …, h_d]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.weights[0].cols())
            .chain(self.weights.iter().map(Matrix::rows))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.depth() - 1].rows()
    }

    /// `h_i` for hidden layers `1..d`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.weights[..self.depth() - 1].iter().map(Matrix::rows).collect()
    }

    pub fn width(&self, i: usize) -> usize {
        self.dims()[i]
    }

    pub fn h_min(&self) -> usize {
        self.hidden_widths().into_iter().min().unwrap_or(0)
    }

    pub fn h_max(&self) -> usize {
        self.hidden_widths().into_iter().max().unwrap_or(0)
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.dims() == other.dims()
    }

    /// Entry-wise `self + t (other - self)`.
    pub fn lerp(&self, other: &Network, t: f64) -> Result<Network> {
        if !self.same_architecture(other) {
            return dim_err(format!("interpolating {:?} and {:?}", self.dims(), other.dims()));
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.lerp(b, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { weights })
    }

    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace> {
        if x.dim() != self.input_dim() {
            return dim_err(format!(
                "input has dim {}, network expects {}",
                x.dim(),
                self.input_dim()
            ));
        }
        let mut preacts = Vec::with_capacity(self.depth());
        let mut cur = matvec_slice(&self.weights[0], x.as_slice());
        for w in &self.weights[1..] {
            let act: Vec<f64> = cur.iter().map(|&v| relu(v)).collect();
            let next = matvec_slice(w, &act);
            preacts.push(Vector::from_vec_unchecked(cur));
            cur = next;
        }
        preacts.push(Vector::from_vec_unchecked(cur));
        Ok(ForwardTrace {
            input: x.clone(),
            preacts,
        })
    }

    /// `f_θ(x)` without keeping the intermediate layers.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = matvec_slice(&self.weights[0], x);
        for w in &self.weights[1..] {
            cur.iter_mut().for_each(|v| *v = relu(*v));
            cur = matvec_slice(w, &cur);
        }
        cur
    }

    /// `M^{i,j}(x^i)`: applies layers `i+1..=j` to the pre-activation `x^i`.
    pub fn partial_forward(&self, i: usize, j: usize, xi: &Vector) -> Result<Vector> {
        self.check_pair(i, j)?;
        if xi.dim() != self.width(i) {
            return dim_err(format!(
                "x^{i} has dim {}, layer {i} has width {}",
                xi.dim(),
                self.width(i)
            ));
        }
        let mut cur = xi.as_slice().to_vec();
        for k in i + 1..=j {
            cur.iter_mut().for_each(|v| *v = relu(*v));
            cur = matvec_slice(self.layer(k), &cur);
        }
        Ok(Vector::from_vec_unchecked(cur))
    }

    /// `J^{i,j}_{x^i} = A_j D_{j-1} ⋯ A_{i+1} D_i`, with `D_k = diag(1[x^k > 0])`
    /// taken along the partial forward pass from `xi`. The ReLU derivative at
    /// exactly zero is taken as 0.
    pub fn interlayer_jacobian(&self, i: usize, j: usize, xi: &Vector) -> Result<Matrix> {
        self.check_pair(i, j)?;
        if xi.dim() != self.width(i) {
            return dim_err(format!(
                "x^{i} has dim {}, layer {i} has width {}",
                xi.dim(),
                self.width(i)
            ));
        }
        let mut jac = Matrix::identity(self.width(i));
        let mut cur = xi.as_slice().to_vec();
        for k in i + 1..=j {
            let a = self.layer(k);
            let mut gated = a.clone();
            for (c, &v) in cur.iter().enumerate() {
                if v <= 0.0 {
                    for r in 0..gated.rows() {
                        gated.set(r, c, 0.0);
                    }
                }
            }
            jac = gated.matmul(&jac)?;
            cur.iter_mut().for_each(|v| *v = relu(*v));
            cur = matvec_slice(a, &cur);
        }
        Ok(jac)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i < 1 || i > j || j > self.depth() {
            return arg_err(format!("layer pair ({i}, {j}) not in 1 <= i <= j <= {}", self.depth()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Network> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Pre-activations of every layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vector,
    /// `x^1 … x^d`.
    pub preacts: Vec<Vector>,
}

impl ForwardTrace {
    /// `x^i` for `0 <= i <= d` (`x^0` is the input).
    pub fn layer(&self, i: usize) -> &Vector {
        if i == 0 {
            &self.input
        } else {
            &self.preacts[i - 1]
        }
    }

    pub fn output(&self) -> &Vector {
        self.preacts.last().expect("trace has at least one layer")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `‖y − ŷ‖²` (no ½ factor).
    Squared,
    SoftmaxCrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" | "mse" => Ok(LossKind::Squared),
            "softmax-ce" | "ce" | "cross-entropy" => Ok(LossKind::SoftmaxCrossEntropy),
            other => arg_err(format!("unknown loss kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// Present when the dataset carries class labels.
    pub accuracy: Option<f64>,
}

/// Per-sample loss `l(y, ŷ)` for sample `i`.
pub(crate) fn sample_loss(kind: LossKind, targets: &Targets, i: usize, out: &[f64]) -> f64 {
    match (kind, targets) {
        (LossKind::Squared, Targets::Values(y)) => y.row(i).iter().zip(out).map(|(a, b)| (a - b) * (a - b)).sum(),
        (LossKind::Squared, Targets::Labels { labels, .. }) => out
            .iter()
            .enumerate()
            .map(|(c, &v)| {
                let t = if c == labels[i] { 1.0 } else { 0.0 };
                (t - v) * (t - v)
            })
            .sum(),
        (LossKind::SoftmaxCrossEntropy, Targets::Labels { labels, .. }) => log_sum_exp(out) - out[labels[i]],
        (LossKind::SoftmaxCrossEntropy, Targets::Values(y)) => {
            // soft targets: −Σ y_c log softmax(ŷ)_c
            let lse = log_sum_exp(out);
            y.row(i).iter().zip(out).map(|(t, v)| t * (lse - v)).sum()
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss over the dataset, plus accuracy when targets are class labels.
///
/// Samples are evaluated in parallel but summed sequentially in index order.
pub fn loss(kind: LossKind, net: &Network, data: &LabeledDataset) -> Result<LossEval> {
    if data.is_empty() {
        return arg_err("loss over an empty dataset");
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
    let targets = data.targets();
    let per_sample: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let out = net.output(data.input(i));
            let l = sample_loss(kind, targets, i, &out);
            let hit = match targets {
                Targets::Labels { labels, .. } => argmax(&out) == labels[i],
                Targets::Values(_) => false,
            };
            (l, hit)
        })
        .collect();
    let n = data.len() as f64;
    let total: f64 = per_sample.iter().map(|p| p.0).sum();
    let accuracy = data
        .has_labels()
        .then(|| per_sample.iter().filter(|p| p.1).count() as f64 / n);
    Ok(LossEval {
        loss: total / n,
        accuracy,
    })
}
