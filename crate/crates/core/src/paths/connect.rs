//! Paths between two different networks.

use super::direct::{direct_dropout_search, DirectDropoutOptions};
use super::lemma31::lemma31_path;
use super::permute::{invert, permutation_segments, permute_network};
use super::units::{active_flags, check_half_dropped};
use super::{PiecewisePath, SegmentKind};
use crate::dropout::{apply_mask, DropoutMask};
use crate::error::{arg_err, dim_err, pre_err, Result};
use crate::linalg::Matrix;
use crate::net::Network;

use SegmentKind::{Interp, Permute, TypeA, TypeB};

const DROP_CONNECT_LABELS: [SegmentKind; 8] = [TypeB, TypeA, TypeB, TypeB, Permute, TypeB, Permute, TypeB];

/// Straight segment from `a` to `b`.
pub fn linear_path(a: &Network, b: &Network) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    PiecewisePath::from_parts(vec![a.clone(), b.clone()], vec![Interp])
}

/// Three segments between networks whose active hidden units are disjoint in
/// every layer: load `to` into the rows `from` does not use (b), switch the
/// output layer (a), then overwrite the remaining rows (b). The last point
/// is `to` exactly.
fn swap_disjoint(from: &Network, to: &Network) -> Result<PiecewisePath> {
    let d = from.depth();
    let from_active: Vec<Vec<bool>> = (1..d).map(|l| active_flags(from, l)).collect();
    for layer in 1..d {
        let to_active = active_flags(to, layer);
        if let Some(u) = (0..to_active.len()).find(|&u| to_active[u] && from_active[layer - 1][u]) {
            return pre_err(format!("unit {u} of hidden layer {layer} is active in both networks"));
        }
    }

    let mut path = PiecewisePath::constant(from.clone());
    let mut cur = from.clone();
    for layer in 1..d {
        for u in (0..from.width(layer)).filter(|&u| !from_active[layer - 1][u]) {
            cur.weights_mut()[layer - 1]
                .row_mut(u)
                .copy_from_slice(to.layer(layer).row(u));
        }
    }
    path.push(TypeB, cur.clone());

    cur.weights_mut()[d - 1] = to.layer(d).clone();
    path.push(TypeA, cur.clone());

    debug_assert!({
        let mut check = cur.clone();
        for layer in 1..d {
            for u in (0..from.width(layer)).filter(|&u| from_active[layer - 1][u]) {
                check.weights_mut()[layer - 1]
                    .row_mut(u)
                    .copy_from_slice(to.layer(layer).row(u));
            }
        }
        &check == to
    });
    path.push(TypeB, to.clone());
    Ok(path)
}

/// Per-layer permutation sending `b`'s active units onto units `a` does not
/// use. Units already outside `a`'s active set stay put; the rest take the
/// lowest free index.
fn separating_permutation(a_active: &[bool], b_active: &[bool]) -> Result<Vec<usize>> {
    let h = a_active.len();
    let mut image = vec![usize::MAX; h];
    let mut used = vec![false; h];
    for u in 0..h {
        if b_active[u] && !a_active[u] {
            image[u] = u;
            used[u] = true;
        }
    }
    let mut free = (0..h).filter(|&v| !a_active[v] && !b_active[v]);
    for u in 0..h {
        if b_active[u] && a_active[u] {
            let v = free
                .next()
                .ok_or_else(|| crate::Error::Precondition("not enough free units to separate active sets".into()))?;
            image[u] = v;
            used[v] = true;
        }
    }
    let mut rest = (0..h).filter(|&v| !used[v]);
    for slot in image.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = rest.next().expect("bijection completes");
    }
    Ok(image)
}

/// Eight segments from `a` to `b`: swap into a permuted copy of `b` whose
/// active units avoid `a`'s, then permute those units home.
fn connect_sparse(a: &Network, b: &Network) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    let perms = (1..a.depth())
        .map(|layer| separating_permutation(&active_flags(a, layer), &active_flags(b, layer)))
        .collect::<Result<Vec<_>>>()?;
    let staged = permute_network(b, &perms)?;
    let swap = swap_disjoint(a, &staged)?;
    let mut home = permutation_segments(&staged, &invert(&perms))?;
    debug_assert_eq!(home.end(), b);
    *home.points.last_mut().expect("non-empty") = b.clone();
    swap.concat(home)
}

/// Connects two networks that each have at least `⌈h_i/2⌉` units with zero
/// outgoing weights in every hidden layer. Always 8 segments; the loss never
/// exceeds the larger endpoint loss.
pub fn drop_connect_path(a: &Network, b: &Network) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    check_half_dropped(a, "first network")?;
    check_half_dropped(b, "second network")?;
    connect_sparse(a, b)
}

fn identical_endpoints(a: &Network, labels: Vec<SegmentKind>) -> PiecewisePath {
    let mut path = PiecewisePath::stationary(a, labels);
    path.notes.push("identical endpoints: stationary path".into());
    path
}

/// `a → masked a` via [`lemma31_path`], drop-connect, then
/// `masked b → b` reversed: `2(4d-6) + 8` segments.
pub fn theorem31_path(a: &Network, mask_a: &DropoutMask, b: &Network, mask_b: &DropoutMask) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    let to_a1 = lemma31_path(a, mask_a)?;
    let to_b1 = lemma31_path(b, mask_b)?;
    if a == b {
        let mut labels = to_a1.labels().to_vec();
        labels.extend(DROP_CONNECT_LABELS);
        labels.extend(to_b1.reversed().labels());
        return Ok(identical_endpoints(a, labels));
    }
    let middle = drop_connect_path(&apply_mask(a, mask_a)?, &apply_mask(b, mask_b)?)?;
    to_a1.concat(middle)?.concat(to_b1.reversed())
}

fn half_widths(net: &Network) -> Vec<usize> {
    net.hidden_widths().iter().map(|h| h.div_ceil(2)).collect()
}

/// Direct dropout on both ends plus drop-connect in the middle: 10 segments.
/// Dropout seeds are resampled until each dropped network has at least half
/// of every hidden layer zeroed (and meets the barrier budget, if any).
pub fn theorem41_path(
    a: &Network,
    b: &Network,
    opts_a: &DirectDropoutOptions,
    opts_b: &DirectDropoutOptions,
) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    if a == b {
        let mut labels = vec![Interp];
        labels.extend(DROP_CONNECT_LABELS);
        labels.push(Interp);
        return Ok(identical_endpoints(a, labels));
    }
    let da = direct_dropout_search(a, opts_a, &half_widths(a))?;
    let db = direct_dropout_search(b, opts_b, &half_widths(b))?;
    let middle = drop_connect_path(da.path.end(), db.path.end())?;
    let mut path = da.path.concat(middle)?.concat(db.path.reversed())?;
    path.notes.push(format!("seeds: a={} b={}", da.seed, db.seed));
    Ok(path)
}

/// Places `teacher`'s hidden units at `positions[i-1]` of a network with the
/// hidden widths `wide`, leaving all other units zero.
fn embed(teacher: &Network, wide: &[usize], positions: &[Vec<usize>]) -> Network {
    let d = teacher.depth();
    let ident_in: Vec<usize> = (0..teacher.input_dim()).collect();
    let ident_out: Vec<usize> = (0..teacher.output_dim()).collect();
    let weights = (1..=d)
        .map(|i| {
            let rows = if i == d { &ident_out } else { &positions[i - 1] };
            let cols = if i == 1 { &ident_in } else { &positions[i - 2] };
            let out_dim = if i == d { teacher.output_dim() } else { wide[i - 1] };
            let in_dim = if i == 1 { teacher.input_dim() } else { wide[i - 2] };
            let t = teacher.layer(i);
            let mut m = Matrix::zeros(out_dim, in_dim);
            for r in 0..t.rows() {
                for c in 0..t.cols() {
                    m.set(rows[r], cols[c], t.get(r, c));
                }
            }
            m
        })
        .collect();
    Network::from_weights_unchecked(weights)
}

#[derive(Debug, Clone, Copy)]
pub struct TeacherStudentOptions<'a> {
    pub a: DirectDropoutOptions<'a>,
    pub b: DirectDropoutOptions<'a>,
}

/// 13 segments: direct dropout on `a` (1), drop-connect into an embedded
/// copy of `teacher` placed away from the dropped `b`'s active units (8),
/// a three-segment swap into dropped `b` (3), and the reversed direct
/// dropout of `b` (1).
///
/// Requires `1.5 max_i(h*_i / h_i) <= p <= 3/4` for the shared dropout
/// probability.
pub fn teacher_student_path(
    a: &Network,
    b: &Network,
    teacher: &Network,
    opts: &TeacherStudentOptions,
) -> Result<PiecewisePath> {
    if !a.same_architecture(b) {
        return dim_err(format!("architectures {:?} and {:?} differ", a.dims(), b.dims()));
    }
    if teacher.depth() != a.depth() || teacher.input_dim() != a.input_dim() || teacher.output_dim() != a.output_dim() {
        return dim_err(format!(
            "teacher {:?} does not match students {:?}",
            teacher.dims(),
            a.dims()
        ));
    }
    if opts.a.p != opts.b.p {
        return arg_err("both students must use the same dropout probability");
    }
    let p = opts.a.p;
    let wide = a.hidden_widths();
    let narrow = teacher.hidden_widths();
    if let Some(i) = (0..wide.len()).find(|&i| narrow[i] > wide[i]) {
        return pre_err(format!("teacher hidden layer {} is wider than the students'", i + 1));
    }
    let ratio = narrow
        .iter()
        .zip(&wide)
        .map(|(&s, &h)| s as f64 / h as f64)
        .fold(0.0, f64::max);
    if !(1.5 * ratio <= p && p <= 0.75) {
        return pre_err(format!(
            "width condition 1.5 * {ratio:.4} <= p <= 0.75 fails for p = {p}"
        ));
    }

    let mut labels = vec![Interp];
    labels.extend(DROP_CONNECT_LABELS);
    labels.extend([TypeB, TypeA, TypeB, Interp]);
    if a == b {
        return Ok(identical_endpoints(a, labels));
    }

    let da = direct_dropout_search(a, &opts.a, &narrow)?;
    let db = direct_dropout_search(b, &opts.b, &narrow)?;
    let b1 = db.path.end();
    let positions: Vec<Vec<usize>> = (1..a.depth())
        .map(|layer| {
            let active = active_flags(b1, layer);
            (0..active.len())
                .filter(|&u| !active[u])
                .take(narrow[layer - 1])
                .collect()
        })
        .collect();
    let placed = embed(teacher, &wide, &positions);

    let into_teacher = connect_sparse(da.path.end(), &placed)?;
    let out_of_teacher = swap_disjoint(&placed, b1)?;
    let mut path = da
        .path
        .concat(into_teacher)?
        .concat(out_of_teacher)?
        .concat(db.path.reversed())?;
    debug_assert_eq!(path.labels(), &labels[..]);
    path.notes.push(format!("seeds: a={} b={}", da.seed, db.seed));
    Ok(path)
}

/// The teacher embedded in the students' architecture at its lowest indices.
pub fn embed_teacher(teacher: &Network, wide_hidden: &[usize]) -> Result<Network> {
    let narrow = teacher.hidden_widths();
    if narrow.len() != wide_hidden.len() || narrow.iter().zip(wide_hidden).any(|(s, h)| s > h) {
        return dim_err("teacher does not fit into the requested widths");
    }
    let positions: Vec<Vec<usize>> = narrow.iter().map(|&s| (0..s).collect()).collect();
    Ok(embed(teacher, wide_hidden, &positions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separating_permutation_is_bijective_and_disjoint() {
        let a = [true, true, false, false, false, false];
        let b = [true, false, true, false, false, true];
        let perm = separating_permutation(&a, &b).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        for u in 0..6 {
            if b[u] {
                assert!(!a[perm[u]]);
            }
        }
        assert_eq!(perm[2], 2);
        assert_eq!(perm[5], 5);
        assert_eq!(perm[0], 3);
    }
}
