use std::path::PathBuf;

use clap::{Args, ValueEnum};
use modeconn::counterexample::{
    build_dataset, build_minima, dataset_identities, probe_barrier, probe_positive_students, CounterexampleSpec,
    PositiveProbeConfig, ProbePath,
};
use modeconn::data::LabeledDataset;
use modeconn::dropout::{apply_mask, derive_seed, dropout_stability_search, keep_counts_for, refine_rescale};
use modeconn::net::{loss, LossKind, Network};
use modeconn::paths::{
    eval_path, linear_path, teacher_student_path, theorem31_path, theorem41_path, BarrierBudget, DirectDropoutOptions,
    PathProfile, PiecewisePath, TeacherStudentOptions, DEFAULT_RETRIES, DEFAULT_SEGMENT_GRID,
};
use modeconn::stability::{stability_report, StabilityConfig, DEFAULT_REALIZATIONS, DEFAULT_T_GRID};
use modeconn::train::{sgd_train, TrainConfig};
use modeconn::{Error, Result};
use serde_json::{json, Value};

use crate::inputs::{emit, load_model, parse_list, summary, write_text, DataArgs, Loaded};

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Dropout probability on every hidden layer during training.
    #[arg(long = "dropout-p", default_value_t = 0.0)]
    pub dropout_p: f64,
}

impl TrainFlags {
    fn config(&self, dims: Vec<usize>, loss: LossKind, seed: u64) -> TrainConfig {
        let hidden = dims.len().saturating_sub(2);
        TrainConfig {
            dims,
            lr: self.lr,
            decay: self.decay,
            batch: self.batch,
            iterations: self.iterations,
            momentum: self.momentum,
            dropout: if self.dropout_p > 0.0 {
                vec![self.dropout_p; hidden]
            } else {
                Vec::new()
            },
            seed,
            loss,
        }
    }
}

fn config_json(cfg: &TrainConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Hidden widths, comma separated (input and output come from the data).
    #[arg(long, default_value = "64,64")]
    pub hidden: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the synthetic teacher (with --teacher-width).
    #[arg(long)]
    pub save_teacher: Option<PathBuf>,
    /// Also write the dataset as CSV.
    #[arg(long)]
    pub save_data: Option<PathBuf>,
}

fn dims_for(data: &LabeledDataset, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![data.input_dim()];
    dims.extend(hidden);
    dims.push(data.output_dim());
    dims
}

fn dataset_csv(data: &LabeledDataset) -> Result<String> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let hidden: Vec<usize> = parse_list(&a.hidden, "--hidden")?;
    let Loaded { data, teacher, kind } = a.data.load()?;
    let cfg = a.train.config(dims_for(&data, &hidden), kind, a.seed);
    let trained = sgd_train(&cfg, &data)?;
    write_text(&a.out, &trained.net.to_json())?;
    if let Some(p) = &a.save_teacher {
        let t = teacher
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--save-teacher needs --teacher-width".into()))?;
        write_text(p, &t.to_json())?;
    }
    if let Some(p) = &a.save_data {
        write_text(p, &dataset_csv(&data)?)?;
    }
    let eval = loss(kind, &trained.net, &data)?;
    emit(
        None,
        &summary(&json!({
            "experiment": "train",
            "seed": a.seed,
            "config": config_json(&cfg),
            "data": a.data.describe(),
            "model": a.out,
            "final_loss": eval.loss,
            "final_accuracy": eval.accuracy,
            "iterations_run": trained.history.len(),
        })),
    )
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Dropout probabilities, comma separated.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
    pub p_list: String,
    #[arg(long, default_value_t = modeconn::dropout::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Independent repetitions averaged per row.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Append standard deviations over the repetitions.
    #[arg(long)]
    pub with_std: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output (embedded in the summary when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn sweep_dropout(a: &SweepArgs) -> Result<()> {
    let ps: Vec<f64> = parse_list(&a.p_list, "--p-list")?;
    if a.repeats == 0 {
        return Err(Error::InvalidArgument("--repeats must be at least 1".into()));
    }
    let net = load_model(&a.model)?;
    let Loaded { data, kind, .. } = a.data.load()?;
    let mut csv = String::from("p,keep_units,best_loss,best_acc");
    if a.with_std {
        csv.push_str(",best_loss_std,best_acc_std");
    }
    csv.push('\n');
    for (pi, &p) in ps.iter().enumerate() {
        let keep = keep_counts_for(&net.hidden_widths(), p)?;
        let mut losses = Vec::new();
        let mut accs = Vec::new();
        for r in 0..a.repeats {
            let seed = derive_seed(derive_seed(a.seed, pi as u64), r as u64);
            let gap = dropout_stability_search(&net, &data, kind, p, a.trials, seed)?;
            losses.push(gap.best_masked_loss);
            if let Some(acc) = loss(kind, &apply_mask(&net, &gap.mask)?, &data)?.accuracy {
                accs.push(acc);
            }
        }
        let keep_units = if keep.iter().all(|&k| k == keep[0]) {
            keep[0].to_string()
        } else {
            keep.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
        };
        let (lm, ls) = mean_std(&losses);
        let acc = (!accs.is_empty()).then(|| mean_std(&accs));
        csv.push_str(&format!("{p},{keep_units},{lm},{}", fmt_opt(acc.map(|a| a.0))));
        if a.with_std {
            csv.push_str(&format!(",{ls},{}", fmt_opt(acc.map(|a| a.1))));
        }
        csv.push('\n');
    }
    let table = match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            json!(p)
        }
        None => json!(csv),
    };
    emit(
        None,
        &summary(&json!({
            "experiment": "sweep-dropout",
            "seed": a.seed,
            "config": {
                "model": a.model, "p_list": ps, "trials": a.trials, "repeats": a.repeats,
                "loss": kind, "data": a.data.describe(),
            },
            "table": table,
        })),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Thm31,
    Thm41,
    TeacherStudent,
    Linear,
}

#[derive(Debug, Args)]
pub struct ConnectArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[command(flatten)]
    pub data: DataArgs,
    /// Teacher model for the teacher-student method (defaults to the
    /// synthetic teacher when --teacher-width is used).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Dropout probability. Defaults: 0.5 for thm31, 0.75 otherwise.
    #[arg(long = "dropout-p")]
    pub dropout_p: Option<f64>,
    /// Masks tried per endpoint (thm31).
    #[arg(long, default_value_t = modeconn::dropout::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Grid points of the rescale refinement (thm31); 0 disables it.
    #[arg(long, default_value_t = 0)]
    pub refine_grid: usize,
    /// Dropout seeds tried per endpoint (thm41, teacher-student).
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    pub retries: usize,
    /// Resample direct-dropout seeds until their segment barrier fits.
    #[arg(long)]
    pub max_barrier: Option<f64>,
    /// Evaluation points per segment.
    #[arg(long, default_value_t = DEFAULT_SEGMENT_GRID)]
    pub segments_grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Profile CSV `t,loss,accuracy` (embedded in the summary when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every path breakpoint as a JSON list of models.
    #[arg(long)]
    pub save_path: Option<PathBuf>,
}

fn profile_csv(p: &PathProfile) -> Result<String> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

pub fn connect(a: &ConnectArgs) -> Result<()> {
    let na = load_model(&a.model_a)?;
    let nb = load_model(&a.model_b)?;
    if !na.same_architecture(&nb) {
        return Err(Error::Dimension(format!(
            "models are {:?} and {:?}",
            na.dims(),
            nb.dims()
        )));
    }
    let Loaded { data, teacher, kind } = a.data.load()?;
    let p = a
        .dropout_p
        .unwrap_or(if a.method == Method::Thm31 { 0.5 } else { 0.75 });
    let mut extra = serde_json::Map::new();
    let budget = a.max_barrier.map(|m| BarrierBudget {
        data: &data,
        kind,
        max_barrier: m,
        grid: a.segments_grid,
    });
    let direct = |seed: u64| DirectDropoutOptions {
        p,
        seed,
        max_attempts: a.retries,
        budget,
    };

    let path: PiecewisePath = match a.method {
        Method::Linear => linear_path(&na, &nb)?,
        Method::Thm31 => {
            let mut masks = Vec::new();
            for (idx, net) in [&na, &nb].into_iter().enumerate() {
                let gap = dropout_stability_search(net, &data, kind, p, a.trials, derive_seed(a.seed, idx as u64))?;
                let (mask, masked_loss) = if a.refine_grid > 0 {
                    refine_rescale(net, &data, kind, &gap.mask, a.refine_grid)?
                } else {
                    (gap.mask.clone(), gap.best_masked_loss)
                };
                extra.insert(
                    format!("gap_{}", ["a", "b"][idx]),
                    json!({"base_loss": gap.base_loss, "masked_loss": masked_loss, "gap": masked_loss - gap.base_loss, "mask": mask}),
                );
                masks.push(mask);
            }
            theorem31_path(&na, &masks[0], &nb, &masks[1])?
        }
        Method::Thm41 => theorem41_path(
            &na,
            &nb,
            &direct(derive_seed(a.seed, 0)),
            &direct(derive_seed(a.seed, 1)),
        )?,
        Method::TeacherStudent => {
            let t = match (&a.teacher, teacher) {
                (Some(path), _) => load_model(path)?,
                (None, Some(t)) => t,
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "teacher-student needs --teacher or --teacher-width".into(),
                    ))
                }
            };
            extra.insert("teacher_loss".into(), json!(loss(kind, &t, &data)?.loss));
            let opts = TeacherStudentOptions {
                a: direct(derive_seed(a.seed, 0)),
                b: direct(derive_seed(a.seed, 1)),
            };
            teacher_student_path(&na, &nb, &t, &opts)?
        }
    };
    let profile = eval_path(&path, &data, kind, a.segments_grid)?;
    if let Some(sp) = &a.save_path {
        write_text(sp, &path.to_json())?;
    }
    let csv = profile_csv(&profile)?;
    let table = match &a.out {
        Some(o) => {
            write_text(o, &csv)?;
            json!(o)
        }
        None => json!(csv),
    };
    let (la, lb) = profile.endpoint_losses();
    let segment_max: Vec<f64> = (0..path.segment_count()).map(|s| profile.segment_max(s)).collect();
    let mut out = json!({
        "experiment": "connect",
        "seed": a.seed,
        "config": {
            "method": format!("{:?}", a.method).to_lowercase(), "model_a": a.model_a, "model_b": a.model_b,
            "dropout_p": p, "trials": a.trials, "retries": a.retries, "refine_grid": a.refine_grid,
            "max_barrier": a.max_barrier, "segments_grid": a.segments_grid, "loss": kind, "data": a.data.describe(),
        },
        "segments": path.segment_count(),
        "labels": path.labels(),
        "endpoint_losses": [la, lb],
        "segment_max_loss": segment_max,
        "max_loss": profile.max_loss,
        "barrier": profile.barrier,
        "notes": path.notes,
        "table": table,
    });
    out.as_object_mut().expect("object").extend(extra);
    emit(None, &summary(&out))
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Dropout probability of the smoothness perturbations.
    #[arg(long = "dropout-p", default_value_t = 0.5)]
    pub dropout_p: f64,
    #[arg(long, default_value_t = DEFAULT_REALIZATIONS)]
    pub realizations: usize,
    #[arg(long, default_value_t = DEFAULT_T_GRID)]
    pub t_grid: usize,
    /// Skip the interlayer smoothness estimate.
    #[arg(long)]
    pub no_smoothness: bool,
    /// Override the loss-dependent β.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for one `value` CSV per quantity and layer.
    #[arg(long)]
    pub hist_dir: Option<PathBuf>,
    /// Report JSON path (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn stability(a: &StabilityArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let Loaded { data, kind, .. } = a.data.load()?;
    let cfg = StabilityConfig {
        p: a.dropout_p,
        realizations: a.realizations,
        t_grid: a.t_grid,
        seed: a.seed,
        smoothness: !a.no_smoothness,
        ..StabilityConfig::default()
    };
    let report = stability_report(&net, &data, kind, a.beta, &cfg)?;
    let files = match &a.hist_dir {
        Some(dir) => report.write_histograms(dir)?,
        None => Vec::new(),
    };
    let mut value = serde_json::to_value(&report)?;
    let obj = value.as_object_mut().expect("object");
    obj.insert("experiment".into(), json!("stability"));
    obj.insert("seed".into(), json!(a.seed));
    obj.insert("model".into(), json!(a.model));
    obj.insert("data".into(), a.data.describe());
    obj.insert("histograms".into(), json!(files));
    emit(a.report.as_deref(), &summary(&value))
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[arg(long, default_value_t = 3)]
    pub h: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub l: usize,
    #[arg(long, default_value_t = 11)]
    pub m: usize,
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    /// Evaluation points on the linear path.
    #[arg(long, default_value_t = 20)]
    pub segments_grid: usize,
    /// Restarts of the positive-output-weight search (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub probe_restarts: usize,
    #[arg(long, default_value_t = 400)]
    pub probe_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV (rows are samples, last column y).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn counterexample(a: &CounterexampleArgs) -> Result<()> {
    let spec = CounterexampleSpec::new(a.h, a.k, a.l, a.m, a.n)?;
    let data = build_dataset(&spec)?;
    let (na, nb) = build_minima(&spec)?;
    let (id1, id2) = dataset_identities(&data);
    let profile = probe_barrier(&spec, ProbePath::Linear, a.segments_grid)?;
    let mid = linear_path(&na, &nb)?.at(0.5)?;
    let midpoint_loss = loss(LossKind::Squared, &mid, &data)?.loss;
    if let Some(p) = &a.out {
        write_text(p, &dataset_csv(&data)?)?;
    }
    let probe = if a.probe_restarts > 0 {
        let cfg = PositiveProbeConfig {
            restarts: a.probe_restarts,
            steps: a.probe_steps,
            seed: a.seed,
            ..Default::default()
        };
        Some(probe_positive_students(&spec, &cfg)?)
    } else {
        None
    };
    emit(
        None,
        &summary(&json!({
            "experiment": "counterexample",
            "seed": a.seed,
            "config": spec,
            "identity_relu_f1_minus_f2": id1,
            "identity_sum_features": id2,
            "loss_two_unit": loss(LossKind::Squared, &na, &data)?.loss,
            "loss_h_unit": loss(LossKind::Squared, &nb, &data)?.loss,
            "linear_midpoint_loss": midpoint_loss,
            "linear_max_loss": profile.max_loss,
            "linear_barrier": profile.barrier,
            "positive_probe": probe,
            "dataset": a.out,
        })),
    )
}

#[derive(Debug, Args)]
pub struct NarrowArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Largest hidden width; widths 1..=W are trained.
    #[arg(long, default_value_t = 8)]
    pub max_width: usize,
    /// Number of hidden layers (all of the same width).
    #[arg(long, default_value_t = 2)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV `width,final_loss` (embedded in the summary when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn narrow_sweep(a: &NarrowArgs) -> Result<()> {
    if a.max_width == 0 || a.hidden_layers == 0 {
        return Err(Error::InvalidArgument(
            "--max-width and --hidden-layers must be at least 1".into(),
        ));
    }
    let Loaded { data, kind, .. } = a.data.load()?;
    let mut csv = String::from("width,final_loss\n");
    for w in 1..=a.max_width {
        let cfg = a.train.config(
            dims_for(&data, &vec![w; a.hidden_layers]),
            kind,
            derive_seed(a.seed, w as u64),
        );
        let net: Network = sgd_train(&cfg, &data)?.net;
        csv.push_str(&format!("{w},{}\n", loss(kind, &net, &data)?.loss));
    }
    let table = match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            json!(p)
        }
        None => json!(csv),
    };
    let example_cfg = a
        .train
        .config(dims_for(&data, &vec![a.max_width; a.hidden_layers]), kind, a.seed);
    emit(
        None,
        &summary(&json!({
            "experiment": "narrow-sweep",
            "seed": a.seed,
            "config": {
                "max_width": a.max_width, "hidden_layers": a.hidden_layers,
                "train": config_json(&example_cfg), "data": a.data.describe(),
                "width_seeds": (1..=a.max_width).map(|w| derive_seed(a.seed, w as u64)).collect::<Vec<_>>(),
            },
            "table": table,
        })),
    )
}
