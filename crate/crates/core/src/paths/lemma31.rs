//! Path from a network to its masked version using only output-layer
//! interpolations (type a) and edits to rows whose outputs are unused (type b).
//!
//! Index bookkeeping: in hidden layer `i` the kept units `K_i` play the role of
//! the "top" block and an equal number of partner units `P_i` (the
//! lowest-index units outside `K_i`) play the role of the "bottom" copy. Units
//! in neither set are zeroed along with the bottom rows. No explicit
//! permutation is needed: the block algebra is applied through these index
//! lists directly.
//!
//! Writing `L_i` for `A_i[K_i, K_{i-1}]` (all columns for `i = 1`) and
//! `r_i` for the mask's factor on layer `i`'s outputs, the segments are
//!
//! ```text
//! a   A_d            <- [r L_d | 0]                         (θ_{d-1} endpoint)
//! for k = d-1 down to 2:
//!   b   rows P_k of A_k      <- r L_k reading K_{k-1}
//!       rows P_i of A_i      <- r L_i reading P_{i-1}      (k < i < d)
//!       other non-kept rows  <- 0
//!   a   A_d            <- [0 | r L_d] on P_{d-1}            (θ_{k-1} endpoint)
//!   b   rows K_k of A_k      <- r L_k reading K_{k-1}
//!   a   A_d            <- [r L_d | 0]                       (same function)
//! b   every non-kept row of A_1 … A_{d-1} <- 0              (= masked network)
//! ```
//!
//! giving `1 + 4(d-2) + 1 = 4d - 6` segments. The zeroing of bottom rows
//! after each inductive step is folded into the next step's first type-b
//! segment, which overwrites those rows anyway.

use super::{PiecewisePath, SegmentKind};
use crate::dropout::{apply_mask, DropoutMask};
use crate::error::{pre_err, Result};
use crate::linalg::Matrix;
use crate::net::Network;

struct Blocks<'a> {
    orig: &'a Network,
    keep: Vec<Vec<usize>>,
    partner: Vec<Vec<usize>>,
    rescale: Vec<f64>,
    depth: usize,
}

impl<'a> Blocks<'a> {
    fn new(net: &'a Network, mask: &DropoutMask) -> Result<Self> {
        mask.validate(net)?;
        let widths = net.hidden_widths();
        let mut partner = Vec::with_capacity(widths.len());
        for (li, &h) in widths.iter().enumerate() {
            let keep = &mask.keep[li];
            if keep.len() > h / 2 {
                return pre_err(format!(
                    "mask keeps {} units in hidden layer {} of width {h}; at most {} allowed",
                    keep.len(),
                    li + 1,
                    h / 2
                ));
            }
            let kept = mask.kept_flags(li + 1, h);
            partner.push((0..h).filter(|&u| !kept[u]).take(keep.len()).collect());
        }
        Ok(Blocks {
            orig: net,
            keep: mask.keep.clone(),
            partner,
            rescale: mask.rescale.clone(),
            depth: net.depth(),
        })
    }

    fn keep(&self, layer: usize) -> &[usize] {
        &self.keep[layer - 1]
    }

    fn partner(&self, layer: usize) -> &[usize] {
        &self.partner[layer - 1]
    }

    /// Row `a` of `L_i` (scaled by `r_{i-1}`), laid out in the columns `dst`.
    /// For `i = 1` the original row is returned unscaled.
    fn block_row(&self, i: usize, a: usize, dst: &[usize]) -> Vec<f64> {
        let orig = self.orig.layer(i);
        let src_row = self.keep(i)[a];
        if i == 1 {
            return orig.row(src_row).to_vec();
        }
        let r = self.rescale[i - 2];
        let mut row = vec![0.0; orig.cols()];
        for (b, &c) in self.keep(i - 1).iter().enumerate() {
            row[dst[b]] = r * orig.get(src_row, c);
        }
        row
    }

    /// `A_d` with `r_{d-1} L_d` placed in columns `dst`, zero elsewhere.
    fn output_layer(&self, dst: &[usize]) -> Matrix {
        let d = self.depth;
        let orig = self.orig.layer(d);
        let r = self.rescale[d - 2];
        let mut out = Matrix::zeros(orig.rows(), orig.cols());
        for o in 0..orig.rows() {
            for (b, &c) in self.keep(d - 1).iter().enumerate() {
                out.set(o, dst[b], r * orig.get(o, c));
            }
        }
        out
    }
}

fn set_row(net: &mut Network, layer: usize, row: usize, values: &[f64]) {
    net.weights_mut()[layer - 1].row_mut(row).copy_from_slice(values);
}

/// Segments alternate type a and type b; the last point equals
/// `apply_mask(net, mask)` bit for bit.
pub fn lemma31_path(net: &Network, mask: &DropoutMask) -> Result<PiecewisePath> {
    let blocks = Blocks::new(net, mask)?;
    let d = net.depth();
    let mut path = PiecewisePath::constant(net.clone());
    let mut cur = net.clone();

    let top_out = blocks.output_layer(blocks.keep(d - 1));
    cur.weights_mut()[d - 1] = top_out.clone();
    path.push(SegmentKind::TypeA, cur.clone());

    for k in (2..d).rev() {
        // b: bottom copies; P_k reads the kept units of layer k-1, deeper
        // copies read the partner units
        for i in k..d {
            let h = net.width(i);
            let cols = net.width(i - 1);
            let kept = mask.kept_flags(i, h);
            let mut bottom = vec![None; h];
            for (a, &p) in blocks.partner(i).iter().enumerate() {
                let dst = if i == k {
                    blocks.keep(i - 1)
                } else {
                    blocks.partner(i - 1)
                };
                bottom[p] = Some(blocks.block_row(i, a, dst));
            }
            for u in (0..h).filter(|&u| !kept[u]) {
                let row = bottom[u].take().unwrap_or_else(|| vec![0.0; cols]);
                set_row(&mut cur, i, u, &row);
            }
        }
        path.push(SegmentKind::TypeB, cur.clone());

        cur.weights_mut()[d - 1] = blocks.output_layer(blocks.partner(d - 1));
        path.push(SegmentKind::TypeA, cur.clone());

        for (a, &u) in blocks.keep(k).iter().enumerate() {
            let row = blocks.block_row(k, a, blocks.keep(k - 1));
            set_row(&mut cur, k, u, &row);
        }
        path.push(SegmentKind::TypeB, cur.clone());

        cur.weights_mut()[d - 1] = top_out.clone();
        path.push(SegmentKind::TypeA, cur.clone());
    }

    for i in 1..d {
        let h = net.width(i);
        let cols = net.width(i - 1);
        let kept = mask.kept_flags(i, h);
        for u in (0..h).filter(|&u| !kept[u]) {
            set_row(&mut cur, i, u, &vec![0.0; cols]);
        }
    }
    debug_assert_eq!(cur, apply_mask(net, mask)?);
    path.push(SegmentKind::TypeB, cur);
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dropout::DropoutMask;

    fn net(dims: &[usize], seed: u64) -> Network {
        let mut state = seed;
        let weights = dims
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1])
                    .map(|_| {
                        state = crate::dropout::splitmix64(state);
                        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                    })
                    .collect();
                Matrix::new(w[1], w[0], data).unwrap()
            })
            .collect();
        Network::new(weights).unwrap()
    }

    #[test]
    fn segment_counts() {
        for d in 2..=6 {
            let mut dims = vec![3];
            dims.extend(std::iter::repeat(6).take(d - 1));
            dims.push(2);
            let n = net(&dims, d as u64);
            let mask = DropoutMask::sample(&n.hidden_widths(), &vec![3; d - 1], &vec![2.0; d - 1], 5).unwrap();
            let path = lemma31_path(&n, &mask).unwrap();
            assert_eq!(path.segment_count(), 4 * d - 6);
            assert_eq!(path.start(), &n);
            assert_eq!(path.end(), &apply_mask(&n, &mask).unwrap());
            for (s, kind) in path.labels().iter().enumerate() {
                let expect = if s % 2 == 0 {
                    SegmentKind::TypeA
                } else {
                    SegmentKind::TypeB
                };
                assert_eq!(*kind, expect);
            }
        }
    }

    #[test]
    fn type_a_segments_touch_only_output_layer() {
        let n = net(&[4, 5, 5, 5, 3], 9);
        let mask = DropoutMask::sample(&n.hidden_widths(), &[2, 2, 1], &[2.0, 1.5, 3.0], 1).unwrap();
        let path = lemma31_path(&n, &mask).unwrap();
        for (s, kind) in path.labels().iter().enumerate() {
            let (p, q) = (&path.points()[s], &path.points()[s + 1]);
            let d = p.depth();
            if *kind == SegmentKind::TypeA {
                assert_eq!(&p.weights()[..d - 1], &q.weights()[..d - 1]);
            } else {
                assert_eq!(p.layer(d), q.layer(d));
            }
        }
    }

    #[test]
    fn rejects_oversized_mask() {
        let n = net(&[2, 5, 1], 3);
        let mask = DropoutMask {
            keep: vec![vec![0, 1, 2]],
            rescale: vec![1.0],
        };
        assert!(matches!(lemma31_path(&n, &mask), Err(crate::Error::Precondition(_))));
    }
}
