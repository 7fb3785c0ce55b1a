//! Five-segment permutation of surviving hidden units.
//!
//! For a layer with active units `N` (non-zero outgoing weights) and at least
//! as many inactive units `Z`, each moving unit `j` gets a staging slot
//! `π'(j) ∈ Z`, equal to `π(j)` whenever that target is already inactive.
//! All layers move at once:
//!
//! 1. copy row `j` of `A_i` into row `π'(j)`                  (type b)
//! 2. move column `j` of `A_{i+1}` to column `π'(j)`           (duplicated units, same output)
//! 3. copy row `π'(j)` into row `π(j)` when `π(j) ∈ N`         (type b)
//! 4. move column `π'(j)` of `A_{i+1}` to column `π(j)`        (duplicated units, same output)
//! 5. overwrite every unit outside `π(N)` with its final row   (type b)
//!
//! The last point is exactly the permuted network, including any non-zero
//! rows that inactive units carry.

use super::units::{active_flags, check_half_dropped};
use super::{PiecewisePath, SegmentKind};
use crate::error::{arg_err, dim_err, pre_err, Result};
use crate::linalg::Matrix;
use crate::net::Network;

/// Network whose unit `π_i(u)` in hidden layer `i` computes what unit `u` did.
/// `perms[i-1]` is a permutation of `0..h_i`.
pub fn permute_network(net: &Network, perms: &[Vec<usize>]) -> Result<Network> {
    check_perms(net, perms)?;
    let d = net.depth();
    let ident_in: Vec<usize> = (0..net.input_dim()).collect();
    let ident_out: Vec<usize> = (0..net.output_dim()).collect();
    let weights = (1..=d)
        .map(|i| {
            let rows = if i == d { &ident_out } else { &perms[i - 1] };
            let cols = if i == 1 { &ident_in } else { &perms[i - 2] };
            let a = net.layer(i);
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                for c in 0..a.cols() {
                    out.set(rows[r], cols[c], a.get(r, c));
                }
            }
            out
        })
        .collect();
    Ok(Network::from_weights_unchecked(weights))
}

fn check_perms(net: &Network, perms: &[Vec<usize>]) -> Result<()> {
    let widths = net.hidden_widths();
    if perms.len() != widths.len() {
        return dim_err(format!(
            "{} permutations for {} hidden layers",
            perms.len(),
            widths.len()
        ));
    }
    for (li, (p, &h)) in perms.iter().zip(&widths).enumerate() {
        let mut seen = vec![false; h];
        if p.len() != h || p.iter().any(|&u| u >= h || std::mem::replace(&mut seen[u], true)) {
            return arg_err(format!("entry {} is not a permutation of 0..{h}", li + 1));
        }
    }
    Ok(())
}

/// Inverse of each per-layer permutation.
pub(crate) fn invert(perms: &[Vec<usize>]) -> Vec<Vec<usize>> {
    perms
        .iter()
        .map(|p| {
            let mut inv = vec![0; p.len()];
            for (u, &v) in p.iter().enumerate() {
                inv[v] = u;
            }
            inv
        })
        .collect()
}

/// Permutes the surviving units of a network in which every hidden layer has
/// at least `⌈h_i/2⌉` units with zero outgoing weights. Returns a
/// zero-segment path when no active unit moves.
pub fn permutation_path(net: &Network, perms: &[Vec<usize>]) -> Result<PiecewisePath> {
    check_perms(net, perms)?;
    check_half_dropped(net, "permutation")?;
    let moves = moving_units(net, perms);
    if moves.iter().all(Vec::is_empty) {
        return Ok(PiecewisePath::constant(net.clone()));
    }
    permutation_segments(net, perms)
}

fn moving_units(net: &Network, perms: &[Vec<usize>]) -> Vec<Vec<usize>> {
    (1..net.depth())
        .map(|layer| {
            let active = active_flags(net, layer);
            (0..active.len())
                .filter(|&u| active[u] && perms[layer - 1][u] != u)
                .collect()
        })
        .collect()
}

struct LayerPlan {
    /// (j, staging slot π'(j), target π(j), target was active)
    moves: Vec<(usize, usize, usize, bool)>,
}

fn plan_layer(active: &[bool], perm: &[usize]) -> Result<LayerPlan> {
    let h = active.len();
    let mut taken = vec![false; h];
    for u in 0..h {
        if active[u] {
            taken[perm[u]] = true;
        }
    }
    let mut free = (0..h).filter(|&u| !active[u] && !taken[u]);
    let mut moves = Vec::new();
    for j in (0..h).filter(|&j| active[j] && perm[j] != j) {
        let target = perm[j];
        if active[target] {
            let slot = free
                .next()
                .ok_or_else(|| crate::Error::Precondition("not enough zeroed units to stage a permutation".into()))?;
            moves.push((j, slot, target, true));
        } else {
            moves.push((j, target, target, false));
        }
    }
    Ok(LayerPlan { moves })
}

fn copy_row(net: &mut Network, layer: usize, from: usize, to: usize) {
    let a = &mut net.weights_mut()[layer - 1];
    let row = a.row(from).to_vec();
    a.row_mut(to).copy_from_slice(&row);
}

fn move_column(net: &mut Network, layer: usize, from: usize, to: usize) {
    let a = &mut net.weights_mut()[layer - 1];
    for r in 0..a.rows() {
        let v = a.get(r, from);
        a.set(r, to, v);
        a.set(r, from, 0.0);
    }
}

/// Always emits five segments (some may be stationary). Requires at least as
/// many inactive as active units in every hidden layer.
pub(crate) fn permutation_segments(net: &Network, perms: &[Vec<usize>]) -> Result<PiecewisePath> {
    check_perms(net, perms)?;
    let d = net.depth();
    let plans = (1..d)
        .map(|layer| {
            let active = active_flags(net, layer);
            let n_active = active.iter().filter(|&&a| a).count();
            if 2 * n_active > active.len() {
                return pre_err(format!(
                    "hidden layer {layer} has {n_active} active units of {}; permuting needs at most half",
                    active.len()
                ));
            }
            plan_layer(&active, &perms[layer - 1])
        })
        .collect::<Result<Vec<_>>>()?;
    let target = permute_network(net, perms)?;

    let mut path = PiecewisePath::constant(net.clone());
    let mut cur = net.clone();

    for (li, plan) in plans.iter().enumerate() {
        for &(j, slot, _, _) in &plan.moves {
            copy_row(&mut cur, li + 1, j, slot);
        }
    }
    path.push(SegmentKind::TypeB, cur.clone());

    for (li, plan) in plans.iter().enumerate() {
        for &(j, slot, _, _) in &plan.moves {
            move_column(&mut cur, li + 2, j, slot);
        }
    }
    path.push(SegmentKind::Permute, cur.clone());

    for (li, plan) in plans.iter().enumerate() {
        for &(_, slot, to, was_active) in &plan.moves {
            if was_active {
                copy_row(&mut cur, li + 1, slot, to);
            }
        }
    }
    path.push(SegmentKind::TypeB, cur.clone());

    for (li, plan) in plans.iter().enumerate() {
        for &(_, slot, to, was_active) in &plan.moves {
            if was_active {
                move_column(&mut cur, li + 2, slot, to);
            }
        }
    }
    path.push(SegmentKind::Permute, cur.clone());

    // every unit outside π(N) now has zero outgoing weights
    for layer in 1..d {
        let final_active = {
            let active = active_flags(net, layer);
            let mut f = vec![false; active.len()];
            for (u, &a) in active.iter().enumerate() {
                if a {
                    f[perms[layer - 1][u]] = true;
                }
            }
            f
        };
        for u in (0..final_active.len()).filter(|&u| !final_active[u]) {
            let row = target.layer(layer).row(u).to_vec();
            cur.weights_mut()[layer - 1].row_mut(u).copy_from_slice(&row);
        }
    }
    debug_assert_eq!(cur, target);
    path.push(SegmentKind::TypeB, target);
    Ok(path)
}
