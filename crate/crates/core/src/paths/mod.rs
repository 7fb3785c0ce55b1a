//! Piecewise-linear paths in parameter space and their loss profiles.
//!
//! Segment `s` of a path with `S` segments occupies `t ∈ [s/S, (s+1)/S]` and
//! interpolates linearly between `points[s]` and `points[s+1]`.
//!
//! Constructions:
//! - [`lemma31_path`]: network to its masked version, `4d - 6` segments.
//! - [`permutation_path`]: permute surviving units, 5 segments, loss constant.
//! - [`drop_connect_path`]: between two half-dropped networks, 8 segments.
//! - [`theorem31_path`]: `2(4d - 6) + 8` segments between two dropout-stable networks.
//! - [`direct_dropout_path`] / [`theorem41_path`]: 1 and 10 segments for noise-stable networks.
//! - [`teacher_student_path`]: 13 segments through an embedded narrow network.

mod connect;
mod direct;
mod lemma31;
mod permute;
mod units;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{arg_err, dim_err, pre_err, Result};
use crate::net::{loss, LossKind, Network};

pub use connect::{
    drop_connect_path, embed_teacher, linear_path, teacher_student_path, theorem31_path, theorem41_path,
    TeacherStudentOptions,
};
pub use direct::{
    direct_dropout_network, direct_dropout_path, direct_dropout_search, BarrierBudget, DirectDropout,
    DirectDropoutOptions, DEFAULT_RETRIES,
};
pub use lemma31::lemma31_path;
pub use permute::{permutation_path, permute_network};
pub use units::{active_units, inactive_count};

/// Default grid points per segment when evaluating paths.
pub const DEFAULT_SEGMENT_GRID: usize = 25;
/// Default probe-set cap for path evaluation.
pub const DEFAULT_PROBE_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Only the output layer `A_d` changes; loss is convex along it.
    TypeA,
    /// Only rows feeding units with all-zero outgoing weights change; the
    /// network function is unchanged.
    TypeB,
    /// Plain interpolation between two arbitrary networks.
    Interp,
    /// Part of a unit permutation; the network function is unchanged up to
    /// rounding.
    Permute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePath {
    points: Vec<Network>,
    labels: Vec<SegmentKind>,
    /// Free-form provenance (seeds used, short-circuits taken).
    pub notes: Vec<String>,
}

impl PiecewisePath {
    /// A path with a single point and no segments.
    pub fn constant(start: Network) -> Self {
        PiecewisePath {
            points: vec![start],
            labels: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn from_parts(points: Vec<Network>, labels: Vec<SegmentKind>) -> Result<Self> {
        if points.is_empty() {
            return arg_err("a path needs at least one point");
        }
        if labels.len() + 1 != points.len() {
            return arg_err(format!(
                "{} points need {} labels, got {}",
                points.len(),
                points.len() - 1,
                labels.len()
            ));
        }
        if points.iter().any(|p| !p.same_architecture(&points[0])) {
            return dim_err("path points have different architectures");
        }
        Ok(PiecewisePath {
            points,
            labels,
            notes: Vec::new(),
        })
    }

    pub(crate) fn push(&mut self, kind: SegmentKind, next: Network) {
        debug_assert!(next.same_architecture(&self.points[0]));
        self.points.push(next);
        self.labels.push(kind);
    }

    pub fn points(&self) -> &[Network] {
        &self.points
    }

    pub fn labels(&self) -> &[SegmentKind] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.labels.len()
    }

    pub fn start(&self) -> &Network {
        &self.points[0]
    }

    pub fn end(&self) -> &Network {
        self.points.last().expect("non-empty path")
    }

    pub fn reversed(&self) -> PiecewisePath {
        let mut points = self.points.clone();
        points.reverse();
        let mut labels = self.labels.clone();
        labels.reverse();
        PiecewisePath {
            points,
            labels,
            notes: self.notes.clone(),
        }
    }

    /// Appends `other`, whose first point must equal this path's last point.
    pub fn concat(mut self, other: PiecewisePath) -> Result<PiecewisePath> {
        if self.end() != other.start() {
            return pre_err("concatenated paths do not share an endpoint");
        }
        self.points.extend(other.points.into_iter().skip(1));
        self.labels.extend(other.labels);
        self.notes.extend(other.notes);
        Ok(self)
    }

    /// Same labels, every point replaced by `net`.
    pub(crate) fn stationary(net: &Network, labels: Vec<SegmentKind>) -> PiecewisePath {
        PiecewisePath {
            points: vec![net.clone(); labels.len() + 1],
            labels,
            notes: Vec::new(),
        }
    }

    /// The network at local parameter `t ∈ [0,1]` of segment `s`. Endpoints
    /// are returned exactly.
    pub fn segment_point(&self, s: usize, t: f64) -> Result<Network> {
        if t <= 0.0 {
            return Ok(self.points[s].clone());
        }
        if t >= 1.0 {
            return Ok(self.points[s + 1].clone());
        }
        self.points[s].lerp(&self.points[s + 1], t)
    }

    /// The network at global parameter `t ∈ [0,1]`.
    pub fn at(&self, t: f64) -> Result<Network> {
        let segs = self.segment_count();
        if segs == 0 {
            return Ok(self.points[0].clone());
        }
        let scaled = t.clamp(0.0, 1.0) * segs as f64;
        let s = (scaled.floor() as usize).min(segs - 1);
        self.segment_point(s, scaled - s as f64)
    }

    /// JSON list of model objects.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.points).expect("networks serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    pub ts: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Option<Vec<f64>>,
    /// Index into `ts` of every segment breakpoint (including both ends).
    pub breakpoints: Vec<usize>,
    pub max_loss: f64,
    /// `max_loss - max(endpoint losses)`.
    pub barrier: f64,
}

impl PathProfile {
    pub fn endpoint_losses(&self) -> (f64, f64) {
        (self.losses[0], *self.losses.last().expect("non-empty profile"))
    }

    /// Largest loss on segment `s`.
    pub fn segment_max(&self, s: usize) -> f64 {
        let lo = self.breakpoints[s];
        let hi = self.breakpoints[s + 1];
        self.losses[lo..=hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `t,loss,accuracy`; accuracy is blank for regression.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,loss,accuracy")?;
        for (i, (t, l)) in self.ts.iter().zip(&self.losses).enumerate() {
            match &self.accuracies {
                Some(acc) => writeln!(out, "{t},{l},{}", acc[i])?,
                None => writeln!(out, "{t},{l},")?,
            }
        }
        Ok(())
    }
}

/// Loss (and accuracy) on a uniform grid of `samples_per_segment` steps per
/// segment, including every breakpoint.
pub fn eval_path(
    path: &PiecewisePath,
    data: &LabeledDataset,
    kind: LossKind,
    samples_per_segment: usize,
) -> Result<PathProfile> {
    if samples_per_segment == 0 {
        return arg_err("need at least one sample per segment");
    }
    let start = path.start();
    if data.input_dim() != start.input_dim() || data.output_dim() != start.output_dim() {
        return dim_err(format!(
            "dataset is {}->{}, path networks are {}->{}",
            data.input_dim(),
            data.output_dim(),
            start.input_dim(),
            start.output_dim()
        ));
    }

    let segs = path.segment_count();
    // (segment, step) pairs; a zero-segment path is evaluated at t = 0 and t = 1.
    let grid: Vec<(f64, usize, usize)> = if segs == 0 {
        vec![(0.0, 0, 0), (1.0, 0, 0)]
    } else {
        let n = samples_per_segment;
        let total = (segs * n) as f64;
        let mut g: Vec<(f64, usize, usize)> = (0..segs)
            .flat_map(|s| (0..n).map(move |m| (((s * n + m) as f64) / total, s, m)))
            .collect();
        g.push((1.0, segs - 1, n));
        g
    };

    let evals = grid
        .par_iter()
        .map(|&(_, s, m)| {
            let net = if segs == 0 {
                path.start().clone()
            } else {
                path.segment_point(s, m as f64 / samples_per_segment as f64)?
            };
            loss(kind, &net, data)
        })
        .collect::<Result<Vec<_>>>()?;

    let ts: Vec<f64> = grid.iter().map(|g| g.0).collect();
    let losses: Vec<f64> = evals.iter().map(|e| e.loss).collect();
    let accuracies = data
        .has_labels()
        .then(|| evals.iter().map(|e| e.accuracy.unwrap_or(0.0)).collect());
    let breakpoints = if segs == 0 {
        vec![0, 1]
    } else {
        (0..=segs).map(|s| s * samples_per_segment).collect()
    };
    let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let end_max = losses[0].max(*losses.last().unwrap());
    Ok(PathProfile {
        ts,
        losses,
        accuracies,
        breakpoints,
        max_loss,
        barrier: max_loss - end_max,
    })
}
