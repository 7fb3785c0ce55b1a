//! A dataset on which two-layer students of width `h` have global minima
//! that no low-loss path connects, the two explicit minima, and probes of
//! the barrier between them.
//!
//! Rows are split into three blocks by `k < l < m < n` (1-based sample `i`):
//!
//! - `i <= l`: `(i, i-1)` in the first two columns; feature column
//!   `3 + (i-1) mod h` is 1, the other feature columns are -1 for `i <= k`
//!   and 0 for `k < i <= l`. Target 1.
//! - `l < i <= m`: -1 in column `1 + (i-l-1) mod 2`, zeros elsewhere. Target 0.
//! - `i > m`: -1 in column `3 + (i-m-1) mod h`, zeros elsewhere. Target 0.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Targets};
use crate::dropout::{derive_seed, rng_from_seed};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::Matrix;
use crate::net::{loss, LossKind, Network};
use crate::paths::{eval_path, linear_path, PathProfile, PiecewisePath};
use crate::train::loss_and_gradient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterexampleSpec {
    pub h: usize,
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub n: usize,
}

impl CounterexampleSpec {
    /// Checks `k < l < m < n`, `k > h`, `l - k > h`, `m - l > 2` and
    /// `n - m > h`; the error names the first one that fails.
    pub fn new(h: usize, k: usize, l: usize, m: usize, n: usize) -> Result<Self> {
        let spec = CounterexampleSpec { h, k, l, m, n };
        spec.validate()?;
        Ok(spec)
    }

    /// `h = 3, k = 4, l = 8, m = 11, n = 15`.
    pub fn minimal() -> Self {
        CounterexampleSpec {
            h: 3,
            k: 4,
            l: 8,
            m: 11,
            n: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let CounterexampleSpec { h, k, l, m, n } = *self;
        let checks = [
            (h >= 2, format!("h >= 2 (h = {h})")),
            (k < l, format!("k < l (k = {k}, l = {l})")),
            (l < m, format!("l < m (l = {l}, m = {m})")),
            (m < n, format!("m < n (m = {m}, n = {n})")),
            (k > h, format!("k > h (k = {k}, h = {h})")),
            (
                l > k + h,
                format!("l - k > h (l - k = {}, h = {h})", l as i64 - k as i64),
            ),
            (m > l + 2, format!("m - l > 2 (m - l = {})", m as i64 - l as i64)),
            (
                n > m + h,
                format!("n - m > h (n - m = {}, h = {h})", n as i64 - m as i64),
            ),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, what)) => arg_err(format!("counterexample parameters violate {what}")),
            None => Ok(()),
        }
    }
}

/// `X ∈ R^{n×(h+2)}` and `y ∈ R^n` as described in the module docs.
pub fn build_dataset(spec: &CounterexampleSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let CounterexampleSpec { h, k, l, m, n } = *spec;
    let cols = h + 2;
    let mut x = Matrix::zeros(n, cols);
    let mut y = Matrix::zeros(n, 1);
    for i in 1..=n {
        let r = i - 1;
        if i <= l {
            x.set(r, 0, i as f64);
            x.set(r, 1, (i - 1) as f64);
            let hot = 2 + (i - 1) % h;
            for c in 2..cols {
                let v = if c == hot {
                    1.0
                } else if i <= k {
                    -1.0
                } else {
                    0.0
                };
                x.set(r, c, v);
            }
            y.set(r, 0, 1.0);
        } else if i <= m {
            x.set(r, (i - l - 1) % 2, -1.0);
        } else {
            x.set(r, 2 + (i - m - 1) % h, -1.0);
        }
    }
    LabeledDataset::new(
        x,
        Targets::Values(y),
        format!("counterexample h={h} k={k} l={l} m={m} n={n}"),
    )
}

/// Checks `φ(f_1) − φ(f_2) = y` and `Σ_{j>=3} φ(f_j) = y` entrywise and
/// exactly, `f_j` being column `j` of the inputs.
pub fn dataset_identities(data: &LabeledDataset) -> (bool, bool) {
    let Targets::Values(y) = data.targets() else {
        return (false, false);
    };
    let x = data.inputs();
    let relu = |v: f64| v.max(0.0);
    let mut first = true;
    let mut second = true;
    for r in 0..x.rows() {
        let t = y.get(r, 0);
        first &= relu(x.get(r, 0)) - relu(x.get(r, 1)) == t;
        second &= (2..x.cols()).map(|c| relu(x.get(r, c))).sum::<f64>() == t;
    }
    (first, second)
}

/// The two zero-loss students `[h+2, h, 1]`: `a` reads the first two columns
/// with output weights `(1, -1, 0, …)`; `b` reads each feature column with
/// all output weights 1.
pub fn build_minima(spec: &CounterexampleSpec) -> Result<(Network, Network)> {
    spec.validate()?;
    let h = spec.h;
    let cols = h + 2;
    let mut a1 = Matrix::zeros(h, cols);
    let mut a2 = Matrix::zeros(1, h);
    a1.set(0, 0, 1.0);
    a1.set(1, 1, 1.0);
    a2.set(0, 0, 1.0);
    a2.set(0, 1, -1.0);
    let mut b1 = Matrix::zeros(h, cols);
    for u in 0..h {
        b1.set(u, u + 2, 1.0);
    }
    let b2 = Matrix::new(1, h, vec![1.0; h])?;
    Ok((Network::new(vec![a1, a2])?, Network::new(vec![b1, b2])?))
}

#[derive(Debug, Clone)]
pub enum ProbePath<'a> {
    /// Straight line between the two minima.
    Linear,
    Custom(&'a PiecewisePath),
}

/// Squared-loss profile along `path` on the instance's dataset.
pub fn probe_barrier(spec: &CounterexampleSpec, path: ProbePath, grid: usize) -> Result<PathProfile> {
    let data = build_dataset(spec)?;
    let owned;
    let path = match path {
        ProbePath::Linear => {
            let (a, b) = build_minima(spec)?;
            owned = linear_path(&a, &b)?;
            &owned
        }
        ProbePath::Custom(p) => {
            let dims = p.start().dims();
            if dims != [spec.h + 2, spec.h, 1] {
                return dim_err(format!(
                    "path networks are {dims:?}, students are [{}, {}, 1]",
                    spec.h + 2,
                    spec.h
                ));
            }
            p
        }
    };
    eval_path(path, &data, LossKind::Squared, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveProbeConfig {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PositiveProbeConfig {
    fn default() -> Self {
        PositiveProbeConfig {
            restarts: 10_000,
            steps: 400,
            lr: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveProbe {
    /// Smallest loss any restart reached.
    pub floor: f64,
    pub best_restart: usize,
    pub restarts: usize,
    /// Always reported: a finite search is evidence, not a certificate.
    pub note: String,
}

/// Searches students with `h - 1` hidden units and non-negative output
/// weights for low loss. Each restart runs projected gradient descent
/// (output weights clamped at 0 after every step) from a seed-derived
/// uniform initialization.
pub fn probe_positive_students(spec: &CounterexampleSpec, cfg: &PositiveProbeConfig) -> Result<PositiveProbe> {
    let data = build_dataset(spec)?;
    if cfg.restarts == 0 || !(cfg.lr > 0.0) {
        return arg_err("need at least one restart and a positive step size");
    }
    let width = spec.h - 1;
    let cols = spec.h + 2;
    let all: Vec<usize> = (0..data.len()).collect();
    let results = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, r as u64));
            let a1 = (0..width * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a2 = (0..width).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut w = vec![Matrix::new(width, cols, a1)?, Matrix::new(1, width, a2)?];
            let mut best = f64::INFINITY;
            for _ in 0..cfg.steps {
                let net = Network::new(w.clone())?;
                let (l, g) = loss_and_gradient(&net, &data, LossKind::Squared, &all)?;
                best = best.min(l);
                for (wm, gm) in w.iter_mut().zip(&g) {
                    for (v, gv) in wm.as_mut_slice().iter_mut().zip(gm.as_slice()) {
                        *v -= cfg.lr * gv;
                    }
                }
                w[1].as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                if w.iter().any(|m| m.as_slice().iter().any(|v| !v.is_finite())) {
                    return Err(Error::NonFinite("positive-weight probe".into()));
                }
            }
            best = best.min(loss(LossKind::Squared, &Network::new(w)?, &data)?.loss);
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (best_restart, floor) = results
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(PositiveProbe {
        floor,
        best_restart,
        restarts: cfg.restarts,
        note: format!(
            "finite search over {} restarts of projected gradient descent; evidence only, not a proof",
            cfg.restarts
        ),
    })
}
