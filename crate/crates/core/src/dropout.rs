//! Column dropout, unit masks, and the best-of-N dropout-stability search.
//!
//! Seeds: every random draw goes through a ChaCha8 stream seeded from a
//! `u64`. Sub-seeds (per trial, per layer) are derived from a master seed with
//! [`derive_seed`], a splitmix64 mix, so results are bit-exact for a given
//! master seed within this implementation.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{arg_err, dim_err, Result};
use crate::linalg::Matrix;
use crate::net::{loss, LossKind, Network};

pub const DEFAULT_TRIALS: usize = 20;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent sub-seed number `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Column dropout: every column of `a` is independently zeroed with probability
/// `p` and otherwise multiplied by `1/(1-p)`.
pub fn algorithm1_dropout(a: &Matrix, p: f64, seed: u64) -> Result<Matrix> {
    algorithm1_dropout_columns(a, p, seed).map(|(m, _)| m)
}

/// Like [`algorithm1_dropout`], also returning which columns survived.
pub fn algorithm1_dropout_columns(a: &Matrix, p: f64, seed: u64) -> Result<(Matrix, Vec<bool>)> {
    if !(p > 0.0 && p < 1.0) {
        return arg_err(format!("dropout probability must lie in (0, 1), got {p}"));
    }
    let mut rng = rng_from_seed(seed);
    let kept: Vec<bool> = (0..a.cols()).map(|_| !rng.random_bool(p)).collect();
    let scale = 1.0 / (1.0 - p);
    let mut out = a.clone();
    for r in 0..a.rows() {
        for (v, &k) in out.row_mut(r).iter_mut().zip(&kept) {
            *v = if k { *v * scale } else { 0.0 };
        }
    }
    Ok((out, kept))
}

/// Kept units per hidden layer plus the factor applied to their outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    /// Sorted kept unit indices, one list per hidden layer `1..d`.
    pub keep: Vec<Vec<usize>>,
    /// `r_i > 0` per hidden layer.
    pub rescale: Vec<f64>,
}

impl DropoutMask {
    pub fn identity(net: &Network) -> DropoutMask {
        let widths = net.hidden_widths();
        DropoutMask {
            keep: widths.iter().map(|&h| (0..h).collect()).collect(),
            rescale: vec![1.0; widths.len()],
        }
    }

    /// Keeps a uniformly random subset of `keep_counts[i]` units in each hidden layer.
    pub fn sample(widths: &[usize], keep_counts: &[usize], rescale: &[f64], seed: u64) -> Result<DropoutMask> {
        if widths.len() != keep_counts.len() || widths.len() != rescale.len() {
            return dim_err("mask layer counts disagree");
        }
        let keep = widths
            .iter()
            .zip(keep_counts)
            .enumerate()
            .map(|(layer, (&h, &k))| {
                if k > h {
                    return arg_err(format!("cannot keep {k} of {h} units"));
                }
                let mut rng = rng_from_seed(derive_seed(seed, layer as u64));
                let mut idx = sample(&mut rng, h, k).into_vec();
                idx.sort_unstable();
                Ok(idx)
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = DropoutMask {
            keep,
            rescale: rescale.to_vec(),
        };
        mask.check_rescale()?;
        Ok(mask)
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let widths = net.hidden_widths();
        if self.keep.len() != widths.len() || self.rescale.len() != widths.len() {
            return dim_err(format!(
                "mask covers {} layers, network has {} hidden layers",
                self.keep.len(),
                widths.len()
            ));
        }
        for (layer, (keep, &h)) in self.keep.iter().zip(&widths).enumerate() {
            if let Some(&bad) = keep.iter().find(|&&u| u >= h) {
                return arg_err(format!(
                    "unit {bad} out of range in hidden layer {} (width {h})",
                    layer + 1
                ));
            }
            if keep.windows(2).any(|w| w[0] >= w[1]) {
                return arg_err(format!(
                    "keep-set of hidden layer {} must be strictly increasing",
                    layer + 1
                ));
            }
        }
        self.check_rescale()
    }

    fn check_rescale(&self) -> Result<()> {
        match self.rescale.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            Some(r) => arg_err(format!("rescale factors must be positive, got {r}")),
            None => Ok(()),
        }
    }

    pub fn keep_counts(&self) -> Vec<usize> {
        self.keep.iter().map(Vec::len).collect()
    }

    /// Membership table for hidden layer `layer` (1-based).
    pub fn kept_flags(&self, layer: usize, width: usize) -> Vec<bool> {
        let mut flags = vec![false; width];
        for &u in &self.keep[layer - 1] {
            flags[u] = true;
        }
        flags
    }
}

/// Zeroes row `j` of `A_i` and column `j` of `A_{i+1}` for every dropped unit
/// `j` of hidden layer `i`, and multiplies the surviving columns of `A_{i+1}`
/// by `r_i`.
pub fn apply_mask(net: &Network, mask: &DropoutMask) -> Result<Network> {
    mask.validate(net)?;
    let mut out = net.clone();
    let widths = net.hidden_widths();
    for (li, &h) in widths.iter().enumerate() {
        let layer = li + 1;
        let kept = mask.kept_flags(layer, h);
        let r = mask.rescale[li];
        let weights = out.weights_mut();
        let a_in = &mut weights[li];
        for (u, &k) in kept.iter().enumerate() {
            if !k {
                a_in.row_mut(u).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let a_out = &mut weights[li + 1];
        for row in 0..a_out.rows() {
            for (v, &k) in a_out.row_mut(row).iter_mut().zip(&kept) {
                *v = if k { r * *v } else { 0.0 };
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGap {
    pub base_loss: f64,
    pub best_masked_loss: f64,
    /// `best_masked_loss - base_loss`; an upper bound on the true dropout-stability ε.
    pub gap: f64,
    pub mask: DropoutMask,
    pub trials: usize,
}

/// Samples `trials` masks that keep exactly `⌊h_i (1-p)⌋` units per hidden
/// layer with `r_i = 1/(1-p)` and returns the best one. Ties go to the
/// lowest trial index.
pub fn dropout_stability_search(
    net: &Network,
    data: &LabeledDataset,
    kind: LossKind,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<StabilityGap> {
    if trials == 0 {
        return arg_err("need at least one trial");
    }
    if !(0.0..1.0).contains(&p) {
        return arg_err(format!("dropout probability must lie in [0, 1), got {p}"));
    }
    let widths = net.hidden_widths();
    let keep_counts = keep_counts_for(&widths, p)?;
    let rescale = vec![1.0 / (1.0 - p); widths.len()];
    let base_loss = loss(kind, net, data)?.loss;

    let results = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mask = DropoutMask::sample(&widths, &keep_counts, &rescale, derive_seed(seed, t as u64))?;
            let l = loss(kind, &apply_mask(net, &mask)?, data)?.loss;
            Ok((l, mask))
        })
        .collect::<Result<Vec<_>>>()?;

    let (best_masked_loss, mask) = results
        .into_iter()
        .reduce(|best, cur| if cur.0 < best.0 { cur } else { best })
        .expect("trials >= 1");
    Ok(StabilityGap {
        base_loss,
        best_masked_loss,
        gap: best_masked_loss - base_loss,
        mask,
        trials,
    })
}

/// `⌊h_i (1-p)⌋` per layer; errors when a layer would keep nothing.
pub fn keep_counts_for(widths: &[usize], p: f64) -> Result<Vec<usize>> {
    widths
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let k = (h as f64 * (1.0 - p)).floor() as usize;
            if k == 0 {
                arg_err(format!("p = {p} keeps no units in hidden layer {} (width {h})", i + 1))
            } else {
                Ok(k)
            }
        })
        .collect()
}

/// Coordinate-wise grid search over `r_i ∈ [0.5, 4]`, one layer at a time.
/// Returns the refined mask and its loss; the original factor is kept on ties.
pub fn refine_rescale(
    net: &Network,
    data: &LabeledDataset,
    kind: LossKind,
    mask: &DropoutMask,
    grid_points: usize,
) -> Result<(DropoutMask, f64)> {
    if grid_points < 2 {
        return arg_err("rescale grid needs at least 2 points");
    }
    let mut best = mask.clone();
    let mut best_loss = loss(kind, &apply_mask(net, &best)?, data)?.loss;
    for layer in 0..best.rescale.len() {
        let candidates: Vec<f64> = (0..grid_points)
            .map(|g| 0.5 + 3.5 * g as f64 / (grid_points - 1) as f64)
            .collect();
        let evals = candidates
            .par_iter()
            .map(|&r| {
                let mut m = best.clone();
                m.rescale[layer] = r;
                Ok((loss(kind, &apply_mask(net, &m)?, data)?.loss, r))
            })
            .collect::<Result<Vec<_>>>()?;
        for (l, r) in evals {
            if l < best_loss {
                best_loss = l;
                best.rescale[layer] = r;
            }
        }
    }
    Ok((best, best_loss))
}
