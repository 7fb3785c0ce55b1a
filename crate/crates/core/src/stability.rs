//! Noise-stability measurements over a dataset: layer and interlayer
//! cushions, activation contraction, interlayer smoothness and the composite
//! noise-stability constant ε.
//!
//! Layers are 1-based. `x^0` is the input and `x^i = A_i φ(x^{i-1})`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Targets};
use crate::dropout::{algorithm1_dropout, derive_seed};
use crate::error::{arg_err, Error, Result};
use crate::linalg::{matvec_slice, norm2, operator_norm, relu, Vector};
use crate::net::{ForwardTrace, LossKind, Network};

pub const DEFAULT_REALIZATIONS: usize = 8;
pub const DEFAULT_T_GRID: usize = 11;

/// Per-sample values of one quantity. Samples whose ratio is 0/0 are counted
/// in `censored`; samples whose ratio is +∞ are counted in `unbounded`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStat {
    pub values: Vec<f64>,
    pub censored: usize,
    #[serde(default)]
    pub unbounded: usize,
}

impl SampleStat {
    pub fn min(&self) -> Option<f64> {
        if self.unbounded > 0 && self.values.is_empty() {
            return Some(f64::INFINITY);
        }
        self.values.iter().copied().reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        if self.unbounded > 0 {
            return Some(f64::INFINITY);
        }
        self.values.iter().copied().reduce(f64::max)
    }

    pub fn median(&self) -> Option<f64> {
        median(&self.values)
    }

    fn push_ratio(&mut self, num: f64, den: f64) {
        if den == 0.0 {
            if num == 0.0 {
                self.censored += 1;
            } else {
                self.unbounded += 1;
            }
        } else {
            self.values.push(num / den);
        }
    }

    fn extend(&mut self, other: SampleStat) {
        self.values.extend(other.values);
        self.censored += other.censored;
        self.unbounded += other.unbounded;
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn traces(net: &Network, data: &LabeledDataset) -> Result<Vec<ForwardTrace>> {
    if data.is_empty() {
        return arg_err("dataset is empty");
    }
    (0..data.len())
        .into_par_iter()
        .map(|s| net.forward(&Vector::from_vec_unchecked(data.input(s).to_vec())))
        .collect()
}

fn require_values(stat: SampleStat, what: &str) -> Result<SampleStat> {
    if stat.values.is_empty() && stat.unbounded == 0 {
        return Err(Error::Degenerate(format!("every sample is degenerate for {what}")));
    }
    Ok(stat)
}

fn layer_cushion_from(net: &Network, traces: &[ForwardTrace], i: usize) -> Result<SampleStat> {
    if i < 1 || i > net.depth() {
        return arg_err(format!("layer {i} not in 1..={}", net.depth()));
    }
    let fro = net.layer(i).frobenius_norm();
    let mut stat = SampleStat::default();
    for tr in traces {
        let input: Vec<f64> = if i == 1 {
            tr.input.as_slice().to_vec()
        } else {
            tr.layer(i - 1).as_slice().iter().map(|&v| relu(v)).collect()
        };
        let num = norm2(tr.layer(i).as_slice());
        stat.push_ratio(num, fro * norm2(&input));
    }
    require_values(stat, &format!("layer cushion {i}"))
}

/// `‖A_i φ(x^{i-1})‖ / (‖A_i‖_F ‖φ(x^{i-1})‖)` per sample. For `i = 1` the raw
/// input `x^0` stands in for `φ(x^0)`.
pub fn layer_cushion(net: &Network, data: &LabeledDataset, i: usize) -> Result<SampleStat> {
    layer_cushion_from(net, &traces(net, data)?, i)
}

fn interlayer_cushion_from(net: &Network, traces: &[ForwardTrace], i: usize, j: usize) -> Result<SampleStat> {
    if i < 1 || i > j || j > net.depth() {
        return arg_err(format!("layer pair ({i}, {j}) not in 1 <= i <= j <= {}", net.depth()));
    }
    let per_sample: Vec<Result<(f64, f64)>> = traces
        .par_iter()
        .map(|tr| {
            let xi = tr.layer(i);
            let xn = xi.norm();
            if i == j {
                return Ok(if xn == 0.0 { (0.0, 0.0) } else { (1.0, 1.0) });
            }
            let jac = net.interlayer_jacobian(i, j, xi)?;
            let jx = norm2(&matvec_slice(&jac, xi.as_slice()));
            // ‖Jx‖/‖x‖ is itself a lower bound on ‖J‖
            let sigma = if xn == 0.0 {
                0.0
            } else {
                operator_norm(&jac)?.max(jx / xn)
            };
            Ok((jx, sigma * xn))
        })
        .collect();
    let mut stat = SampleStat::default();
    for r in per_sample {
        let (num, den) = r?;
        if den == 0.0 {
            stat.censored += 1;
        } else {
            stat.values.push(num / den);
        }
    }
    require_values(stat, &format!("interlayer cushion ({i}, {j})"))
}

/// `‖J^{i,j} x^i‖ / (‖J^{i,j}‖ ‖x^i‖)` per sample, spectral norm in the
/// denominator. Exactly 1 when `i = j`.
pub fn interlayer_cushion(net: &Network, data: &LabeledDataset, i: usize, j: usize) -> Result<SampleStat> {
    interlayer_cushion_from(net, &traces(net, data)?, i, j)
}

/// `min_{i <= j <= d} μ_{i,j}`.
pub fn minimal_interlayer_cushion(net: &Network, data: &LabeledDataset, i: usize) -> Result<f64> {
    let tr = traces(net, data)?;
    let mut best = f64::INFINITY;
    for j in i..=net.depth() {
        best = best.min(interlayer_cushion_from(net, &tr, i, j)?.min().expect("non-empty"));
    }
    Ok(best)
}

fn contraction_from(net: &Network, traces: &[ForwardTrace]) -> Vec<SampleStat> {
    (1..net.depth())
        .map(|i| {
            let mut stat = SampleStat::default();
            for tr in traces {
                let x = tr.layer(i).as_slice();
                let act: Vec<f64> = x.iter().map(|&v| relu(v)).collect();
                stat.push_ratio(norm2(x), norm2(&act));
            }
            stat
        })
        .collect()
}

/// `‖x^i‖ / ‖φ(x^i)‖` over samples and hidden layers `1..d-1`, pooled.
/// A layer output with no positive entry gives an unbounded ratio.
pub fn activation_contraction(net: &Network, data: &LabeledDataset) -> Result<SampleStat> {
    let mut all = SampleStat::default();
    for s in contraction_from(net, &traces(net, data)?) {
        all.extend(s);
    }
    require_values(all, "activation contraction")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub p: f64,
    pub realizations: usize,
    pub t_grid: usize,
    /// Distribution for layers `i = 2..d`, pooled over `j`, samples, `t`,
    /// both perturbations and all realizations.
    pub per_layer: Vec<SampleStat>,
    /// Smallest uncensored value in each realization.
    pub realization_mins: Vec<Option<f64>>,
    pub rho_min: Option<f64>,
    /// Median of `realization_mins`.
    pub rho_median: Option<f64>,
    /// `M − J` vanished: the perturbation stayed in the linear region.
    pub censored_linear: usize,
    /// The perturbed point coincided with `x^i`, or `x^i = 0`.
    pub censored_degenerate: usize,
    /// Largest `√h_i ‖φ(x̂)‖_∞ / ‖φ(x̂)‖` over perturbed hidden layers.
    pub infinity_constant: f64,
}

/// Gated pass `J^{i,j}_{x^i} v` using the activation pattern of `tr`.
fn jacobian_apply(net: &Network, tr: &ForwardTrace, i: usize, j: usize, v: &[f64]) -> Vec<f64> {
    let mut cur = v.to_vec();
    for k in i + 1..=j {
        for (c, &x) in cur.iter_mut().zip(tr.layer(k - 1).as_slice()) {
            if x <= 0.0 {
                *c = 0.0;
            }
        }
        cur = matvec_slice(net.layer(k), &cur);
    }
    cur
}

fn preact(net: &Network, x: &[f64], layer: usize) -> Vec<f64> {
    let mut cur = matvec_slice(net.layer(1), x);
    for k in 2..=layer {
        cur.iter_mut().for_each(|v| *v = relu(*v));
        cur = matvec_slice(net.layer(k), &cur);
    }
    cur
}

fn infinity_ratio(x: &[f64]) -> Option<f64> {
    let act: Vec<f64> = x.iter().map(|&v| relu(v)).collect();
    let n = norm2(&act);
    (n > 0.0).then(|| act.iter().copied().fold(0.0, f64::max) * (act.len() as f64).sqrt() / n)
}

#[derive(Default)]
struct SmoothAcc {
    per_layer: Vec<SampleStat>,
    linear: usize,
    degenerate: usize,
    infinity: f64,
}

/// Tight `ρ` values for dropout-shaped perturbations. Realization `r` applies
/// column dropout with probability `p` to `A_2 … A_d` (seed
/// `derive_seed(derive_seed(seed, r), k)` for layer `k`); `θ^i` replaces
/// `A_2 … A_i`. For each `2 <= i <= j <= d`, sample `x` and
/// `t = m/(t_grid-1)`, the perturbed pre-activation `x̂` at layer `i` under
/// `tθ + (1-t)θ^i` and under `tθ + (1-t)θ^{i-1}` gives
/// `ρ̂ = ‖x̂ − x^i‖ ‖x^j‖ / (‖M^{i,j}(x̂) − J^{i,j}_{x^i} x̂‖ ‖x^i‖)`.
pub fn interlayer_smoothness(
    net: &Network,
    data: &LabeledDataset,
    p: f64,
    realizations: usize,
    t_grid: usize,
    seed: u64,
) -> Result<Smoothness> {
    if !(p > 0.0 && p < 1.0) {
        return arg_err(format!("dropout probability must lie in (0, 1), got {p}"));
    }
    if realizations == 0 || t_grid < 2 {
        return arg_err("need at least one realization and two grid points");
    }
    let d = net.depth();
    let tr = traces(net, data)?;
    let ts: Vec<f64> = (0..t_grid).map(|m| m as f64 / (t_grid - 1) as f64).collect();

    let mut infinity = tr
        .iter()
        .filter_map(|t| {
            if d > 1 {
                infinity_ratio(t.layer(1).as_slice())
            } else {
                None
            }
        })
        .fold(0.0, f64::max);
    let mut per_layer = vec![SampleStat::default(); d.saturating_sub(1)];
    let mut realization_mins = Vec::with_capacity(realizations);
    let (mut linear, mut degenerate) = (0, 0);

    for r in 0..realizations {
        let rseed = derive_seed(seed, r as u64);
        // thetas[i-1] = θ^i
        let mut thetas = vec![net.clone()];
        let mut weights = net.weights().to_vec();
        for k in 2..=d {
            weights[k - 1] = algorithm1_dropout(net.layer(k), p, derive_seed(rseed, k as u64))?;
            thetas.push(Network::new(weights.clone())?);
        }

        let acc: Vec<SmoothAcc> = tr
            .par_iter()
            .enumerate()
            .map(|(s, trace)| {
                let x = data.input(s);
                let mut acc = SmoothAcc {
                    per_layer: vec![SampleStat::default(); d - 1],
                    ..Default::default()
                };
                for i in 2..=d {
                    let xi = trace.layer(i).as_slice();
                    let xi_norm = norm2(xi);
                    for &t in &ts {
                        for (which, base) in [&thetas[i - 1], &thetas[i - 2]].into_iter().enumerate() {
                            let mixed = base.lerp(net, t).expect("same architecture");
                            let xhat = preact(&mixed, x, i);
                            if which == 0 && i < d {
                                if let Some(v) = infinity_ratio(&xhat) {
                                    acc.infinity = acc.infinity.max(v);
                                }
                            }
                            let diff: Vec<f64> = xhat.iter().zip(xi).map(|(a, b)| a - b).collect();
                            let dn = norm2(&diff);
                            for j in i..=d {
                                if dn == 0.0 || xi_norm == 0.0 {
                                    acc.degenerate += 1;
                                    continue;
                                }
                                let xh = Vector::from_vec_unchecked(xhat.clone());
                                let m = net.partial_forward(i, j, &xh).expect("valid layers");
                                let jx = jacobian_apply(net, trace, i, j, &xhat);
                                let resid: Vec<f64> = m.as_slice().iter().zip(&jx).map(|(a, b)| a - b).collect();
                                let rn = norm2(&resid);
                                if rn == 0.0 {
                                    acc.linear += 1;
                                    continue;
                                }
                                acc.per_layer[i - 2]
                                    .values
                                    .push(dn * norm2(trace.layer(j).as_slice()) / (rn * xi_norm));
                            }
                        }
                    }
                }
                acc
            })
            .collect();

        let mut rmin: Option<f64> = None;
        for a in acc {
            for (li, stat) in a.per_layer.into_iter().enumerate() {
                if let Some(m) = stat.min() {
                    rmin = Some(rmin.map_or(m, |x: f64| x.min(m)));
                }
                per_layer[li].extend(stat);
            }
            linear += a.linear;
            degenerate += a.degenerate;
            infinity = infinity.max(a.infinity);
        }
        realization_mins.push(rmin);
    }
    let mins: Vec<f64> = realization_mins.iter().flatten().copied().collect();
    Ok(Smoothness {
        p,
        realizations,
        t_grid,
        per_layer,
        rho_min: mins.iter().copied().reduce(f64::min),
        rho_median: median(&mins),
        realization_mins,
        censored_linear: linear,
        censored_degenerate: degenerate,
        infinity_constant: infinity,
    })
}

/// Thresholds for the side conditions attached to ε. The asymptotic
/// conditions hide their constants, so these only set the pass/warn line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideThresholds {
    pub min_width: usize,
    /// Pass when `ρ >= rho_factor * d`.
    pub rho_factor: f64,
    pub infinity_constant: f64,
}

impl Default for SideThresholds {
    fn default() -> Self {
        SideThresholds {
            min_width: 16,
            rho_factor: 3.0,
            infinity_constant: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCheck {
    pub name: String,
    pub measured: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub beta: f64,
    pub checks: Vec<SideCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub p: f64,
    pub realizations: usize,
    pub t_grid: usize,
    pub seed: u64,
    /// Skip the smoothness estimate (the most expensive part).
    pub smoothness: bool,
    pub thresholds: SideThresholds,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            p: 0.5,
            realizations: DEFAULT_REALIZATIONS,
            t_grid: DEFAULT_T_GRID,
            seed: 0,
            smoothness: true,
            thresholds: SideThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub i: usize,
    pub j: usize,
    pub stat: SampleStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub depth: usize,
    pub hidden_widths: Vec<usize>,
    /// `μ_i` for `i = 1..d`; layer 1 uses the raw input and is not part of ε.
    pub layer_cushions: Vec<SampleStat>,
    pub interlayer_cushions: Vec<PairStat>,
    /// `μ_{i→}` for `i = 1..d`.
    pub minimal_interlayer_cushions: Vec<f64>,
    /// Per hidden layer `1..d-1`.
    pub activation_contraction: Vec<SampleStat>,
    /// `c`: the largest contraction over samples and hidden layers.
    pub contraction: f64,
    pub max_output_norm: f64,
    pub smoothness: Option<Smoothness>,
    pub beta: f64,
    /// Set when β is a data-dependent bound rather than a constant.
    pub beta_note: Option<String>,
    pub epsilon: Option<EpsilonReport>,
    /// Problems that prevented ε from being computed.
    pub warnings: Vec<String>,
    pub config: StabilityConfig,
}

impl StabilityReport {
    pub fn layer_cushion(&self, i: usize) -> f64 {
        self.layer_cushions[i - 1].min().unwrap_or(f64::NAN)
    }

    pub fn h_min(&self) -> usize {
        self.hidden_widths.iter().copied().min().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One single-column CSV (`value`) per quantity and layer in `dir`.
    pub fn write_histograms(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut emit = |name: String, values: &[f64]| -> Result<()> {
            let path = dir.join(name);
            let mut body = String::from("value\n");
            for v in values {
                body.push_str(&format!("{v}\n"));
            }
            fs::write(&path, body)?;
            files.push(path);
            Ok(())
        };
        for (li, s) in self.layer_cushions.iter().enumerate() {
            emit(format!("layer_cushion_{}.csv", li + 1), &s.values)?;
        }
        for pair in &self.interlayer_cushions {
            emit(
                format!("interlayer_cushion_{}_{}.csv", pair.i, pair.j),
                &pair.stat.values,
            )?;
        }
        for (li, s) in self.activation_contraction.iter().enumerate() {
            emit(format!("activation_contraction_{}.csv", li + 1), &s.values)?;
        }
        if let Some(sm) = &self.smoothness {
            for (li, s) in sm.per_layer.iter().enumerate() {
                emit(format!("interlayer_smoothness_{}.csv", li + 2), &s.values)?;
            }
        }
        Ok(files)
    }
}

/// β for the loss: `√2` for softmax cross-entropy; for squared loss the
/// data-dependent bound `2 max ‖y − ŷ‖`, returned with a note.
pub fn default_beta(net: &Network, data: &LabeledDataset, kind: LossKind) -> Result<(f64, Option<String>)> {
    match kind {
        LossKind::SoftmaxCrossEntropy => Ok((std::f64::consts::SQRT_2, None)),
        LossKind::Squared => {
            let Targets::Values(y) = data.targets() else {
                return arg_err("squared loss needs real-valued targets");
            };
            let mut worst: f64 = 0.0;
            for s in 0..data.len() {
                let out = net.output(data.input(s));
                let r: Vec<f64> = out.iter().zip(y.row(s)).map(|(a, b)| a - b).collect();
                worst = worst.max(norm2(&r));
            }
            Ok((
                2.0 * worst,
                Some("squared loss: beta = 2 max |y - f(x)| over the data".into()),
            ))
        }
    }
}

/// `β c d^{3/2} max‖f‖ / (√h_min · min_{2<=i<=d} μ_i μ_{i→})`.
pub fn epsilon_formula(
    beta: f64,
    c: f64,
    d: usize,
    max_output_norm: f64,
    h_min: usize,
    min_cushion_product: f64,
) -> f64 {
    beta * c * (d as f64).powf(1.5) * max_output_norm / ((h_min as f64).sqrt() * min_cushion_product)
}

/// ε for a report, with the side conditions evaluated against
/// `report.config.thresholds`.
pub fn epsilon_noise_stable(report: &StabilityReport, beta: f64) -> Result<EpsilonReport> {
    let d = report.depth;
    let mut product = f64::INFINITY;
    for i in 2..=d {
        let mu = report.layer_cushion(i);
        let arrow = report.minimal_interlayer_cushions[i - 1];
        if !(mu > 0.0 && arrow > 0.0) {
            return Err(Error::Degenerate(format!("non-positive cushion at layer {i}")));
        }
        product = product.min(mu * arrow);
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return arg_err(format!("beta must be finite and non-negative, got {beta}"));
    }
    if !report.contraction.is_finite() {
        return Err(Error::Degenerate("activation contraction is unbounded".into()));
    }
    let h_min = report.h_min();
    let epsilon = epsilon_formula(beta, report.contraction, d, report.max_output_norm, h_min, product);

    let th = report.config.thresholds;
    let rho = report.smoothness.as_ref().and_then(|s| s.rho_min);
    let inf = report.smoothness.as_ref().map(|s| s.infinity_constant);
    let checks = vec![
        SideCheck {
            name: "h_min".into(),
            measured: Some(h_min as f64),
            threshold: th.min_width as f64,
            pass: h_min >= th.min_width,
        },
        SideCheck {
            name: "rho >= factor * d".into(),
            measured: rho,
            threshold: th.rho_factor * d as f64,
            // every perturbation linear: no constraint on ρ
            pass: report.smoothness.is_some() && rho.is_none_or(|r| r >= th.rho_factor * d as f64),
        },
        SideCheck {
            name: "infinity-norm constant".into(),
            measured: inf,
            threshold: th.infinity_constant,
            pass: inf.is_some_and(|v| v <= th.infinity_constant),
        },
    ];
    Ok(EpsilonReport { epsilon, beta, checks })
}

/// Every quantity above for one network and dataset. `beta` overrides the
/// loss-dependent default.
pub fn stability_report(
    net: &Network,
    data: &LabeledDataset,
    kind: LossKind,
    beta: Option<f64>,
    config: &StabilityConfig,
) -> Result<StabilityReport> {
    let d = net.depth();
    let tr = traces(net, data)?;
    let mut warnings = Vec::new();

    let mut layer_cushions = Vec::with_capacity(d);
    for i in 1..=d {
        match layer_cushion_from(net, &tr, i) {
            Ok(s) => layer_cushions.push(s),
            Err(Error::Degenerate(msg)) => {
                warnings.push(msg);
                layer_cushions.push(SampleStat {
                    values: vec![],
                    censored: tr.len(),
                    unbounded: 0,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let mut interlayer_cushions = Vec::new();
    let mut minimal = vec![f64::INFINITY; d];
    for i in 1..=d {
        for j in i..=d {
            let stat = match interlayer_cushion_from(net, &tr, i, j) {
                Ok(s) => s,
                Err(Error::Degenerate(msg)) => {
                    warnings.push(msg);
                    SampleStat {
                        values: vec![],
                        censored: tr.len(),
                        unbounded: 0,
                    }
                }
                Err(e) => return Err(e),
            };
            minimal[i - 1] = minimal[i - 1].min(stat.min().unwrap_or(f64::NAN));
            interlayer_cushions.push(PairStat { i, j, stat });
        }
    }
    let activation_contraction = contraction_from(net, &tr);
    let contraction = activation_contraction
        .iter()
        .filter_map(SampleStat::max)
        .fold(1.0, f64::max);
    let max_output_norm = tr.iter().map(|t| t.output().norm()).fold(0.0, f64::max);
    let smoothness = if config.smoothness {
        Some(interlayer_smoothness(
            net,
            data,
            config.p,
            config.realizations,
            config.t_grid,
            config.seed,
        )?)
    } else {
        None
    };
    let (beta, beta_note) = match beta {
        Some(b) => (b, None),
        None => default_beta(net, data, kind)?,
    };

    let mut report = StabilityReport {
        depth: d,
        hidden_widths: net.hidden_widths(),
        layer_cushions,
        interlayer_cushions,
        minimal_interlayer_cushions: minimal,
        activation_contraction,
        contraction,
        max_output_norm,
        smoothness,
        beta,
        beta_note,
        epsilon: None,
        warnings,
        config: config.clone(),
    };
    match epsilon_noise_stable(&report, beta) {
        Ok(eps) => report.epsilon = Some(eps),
        Err(e) => report.warnings.push(format!("epsilon not computed: {e}")),
    }
    Ok(report)
}
