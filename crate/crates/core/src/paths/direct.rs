//! Single-segment interpolation from a network to its column-dropout
//! version, with seed resampling against a barrier budget.

use super::units::inactive_count;
use super::{eval_path, PiecewisePath, SegmentKind};
use crate::data::LabeledDataset;
use crate::dropout::{algorithm1_dropout, derive_seed};
use crate::error::{arg_err, pre_err, Result};
use crate::net::{LossKind, Network};

/// The interpolation succeeds with probability at least 1/4, so 16 attempts
/// fail with probability at most (3/4)^16 ≈ 1%.
pub const DEFAULT_RETRIES: usize = 16;

/// Applies column dropout to `A_2 … A_d`; `A_1` is left alone since dropping
/// columns of `A_2` already removes units of layer 1. Layer `i` uses
/// `derive_seed(seed, i)`.
pub fn direct_dropout_network(net: &Network, p: f64, seed: u64) -> Result<Network> {
    if !(p > 0.0 && p < 1.0) {
        return arg_err(format!("dropout probability must lie in (0, 1), got {p}"));
    }
    let mut weights = net.weights().to_vec();
    for i in 2..=net.depth() {
        weights[i - 1] = algorithm1_dropout(net.layer(i), p, derive_seed(seed, i as u64))?;
    }
    Network::new(weights)
}

/// One `Interp` segment from `net` to [`direct_dropout_network`].
pub fn direct_dropout_path(net: &Network, p: f64, seed: u64) -> Result<PiecewisePath> {
    let dropped = direct_dropout_network(net, p, seed)?;
    let mut path = PiecewisePath::constant(net.clone());
    path.push(SegmentKind::Interp, dropped);
    path.notes.push(format!("direct dropout p={p} seed={seed}"));
    Ok(path)
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierBudget<'a> {
    pub data: &'a LabeledDataset,
    pub kind: LossKind,
    /// Largest acceptable `max loss on segment - loss(net)`.
    pub max_barrier: f64,
    pub grid: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DirectDropoutOptions<'a> {
    pub p: f64,
    pub seed: u64,
    pub max_attempts: usize,
    pub budget: Option<BarrierBudget<'a>>,
}

impl DirectDropoutOptions<'_> {
    pub fn new(p: f64, seed: u64) -> Self {
        DirectDropoutOptions {
            p,
            seed,
            max_attempts: DEFAULT_RETRIES,
            budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirectDropout {
    pub path: PiecewisePath,
    pub seed: u64,
    pub attempts: usize,
    /// Measured barrier when a budget was given.
    pub barrier: Option<f64>,
    /// False when no attempt met the budget; `path` is then the attempt with
    /// the smallest barrier.
    pub within_budget: bool,
    pub warnings: Vec<String>,
}

/// Resamples dropout seeds `derive_seed(opts.seed, attempt)` until the
/// dropped network has at least `min_zeroed[i]` units with zero outgoing
/// weights in every hidden layer and, when a budget is set, the segment's
/// barrier fits in it.
pub fn direct_dropout_search(
    net: &Network,
    opts: &DirectDropoutOptions,
    min_zeroed: &[usize],
) -> Result<DirectDropout> {
    if opts.max_attempts == 0 {
        return arg_err("need at least one attempt");
    }
    let mut warnings = Vec::new();
    let h_min = net.h_min() as f64;
    if opts.p > 0.75 {
        warnings.push(format!("p = {} exceeds 3/4", opts.p));
    }
    if opts.p * h_min < (h_min.ln()).max(1.0) {
        warnings.push(format!("p = {} is small relative to 1/h_min (h_min = {h_min})", opts.p));
    }

    let mut best: Option<DirectDropout> = None;
    let mut structurally_ok = false;
    for attempt in 0..opts.max_attempts {
        let seed = derive_seed(opts.seed, attempt as u64);
        let path = direct_dropout_path(net, opts.p, seed)?;
        let dropped = path.end();
        let enough = (1..net.depth()).all(|layer| inactive_count(dropped, layer) >= min_zeroed[layer - 1]);
        if !enough {
            continue;
        }
        structurally_ok = true;
        let barrier = match opts.budget {
            None => {
                return Ok(DirectDropout {
                    path,
                    seed,
                    attempts: attempt + 1,
                    barrier: None,
                    within_budget: true,
                    warnings,
                })
            }
            Some(b) => {
                let prof = eval_path(&path, b.data, b.kind, b.grid)?;
                prof.max_loss - prof.losses[0]
            }
        };
        let within = barrier <= opts.budget.map_or(f64::INFINITY, |b| b.max_barrier);
        let candidate = DirectDropout {
            path,
            seed,
            attempts: attempt + 1,
            barrier: Some(barrier),
            within_budget: within,
            warnings: warnings.clone(),
        };
        if within {
            return Ok(candidate);
        }
        if best
            .as_ref()
            .is_none_or(|b| barrier < b.barrier.unwrap_or(f64::INFINITY))
        {
            best = Some(candidate);
        }
    }
    if !structurally_ok {
        return pre_err(format!(
            "no dropout sample in {} attempts zeroed the required units {min_zeroed:?}",
            opts.max_attempts
        ));
    }
    let mut out = best.expect("a structurally valid attempt was recorded");
    out.attempts = opts.max_attempts;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn net() -> Network {
        let a1 = Matrix::new(8, 3, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a2 = Matrix::new(8, 8, (0..64).map(|i| (i as f64 * 0.73).cos()).collect()).unwrap();
        let a3 = Matrix::new(2, 8, (0..16).map(|i| (i as f64 * 1.1).sin()).collect()).unwrap();
        Network::new(vec![a1, a2, a3]).unwrap()
    }

    #[test]
    fn single_segment_first_layer_untouched() {
        let n = net();
        let path = direct_dropout_path(&n, 0.5, 3).unwrap();
        assert_eq!(path.segment_count(), 1);
        assert_eq!(path.start(), &n);
        assert_eq!(path.end().layer(1), n.layer(1));
        assert_ne!(path.end().layer(2), n.layer(2));
        assert!(direct_dropout_path(&n, 1.0, 3).is_err());
    }

    #[test]
    fn search_meets_structural_requirement() {
        let n = net();
        let found = direct_dropout_search(&n, &DirectDropoutOptions::new(0.75, 1), &[4, 4]).unwrap();
        for layer in 1..3 {
            assert!(inactive_count(found.path.end(), layer) >= 4);
        }
        assert!(found.within_budget);
        let impossible = direct_dropout_search(&n, &DirectDropoutOptions::new(0.05, 1), &[8, 8]);
        assert!(matches!(impossible, Err(crate::Error::Precondition(_))));
    }
}
