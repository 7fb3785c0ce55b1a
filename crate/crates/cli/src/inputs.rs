//! Loading models and datasets, list parsing and output helpers.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use modeconn::data::LabeledDataset;
use modeconn::net::{LossKind, Network};
use modeconn::train::{load_idx, make_teacher_student_data};
use modeconn::{Error, Result};

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with a header row; the last column is the regression target.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["idx_images", "teacher_width"])]
    pub data_csv: Option<PathBuf>,
    /// IDX image file (requires --idx-labels).
    #[arg(long, value_name = "PATH", requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, value_name = "PATH", requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Use at most this many samples (the first ones).
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Synthetic data labeled by a random [input, w, w, 1] teacher.
    #[arg(long, conflicts_with = "idx_images")]
    pub teacher_width: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Loss: squared or softmax-ce. Defaults to softmax-ce for labeled data
    /// and squared otherwise.
    #[arg(long)]
    pub loss: Option<LossKind>,
}

pub struct Loaded {
    pub data: LabeledDataset,
    pub teacher: Option<Network>,
    pub kind: LossKind,
}

impl DataArgs {
    pub fn load(&self) -> Result<Loaded> {
        let (data, teacher) = if let Some(path) = &self.data_csv {
            let f = fs::File::open(path)?;
            (
                LabeledDataset::read_csv(BufReader::new(f), &path.display().to_string())?,
                None,
            )
        } else if let (Some(img), Some(lab)) = (&self.idx_images, &self.idx_labels) {
            (load_idx(img, lab)?, None)
        } else if let Some(w) = self.teacher_width {
            let (t, d) = make_teacher_student_data(w, self.input_dim, self.samples, self.data_seed)?;
            (d, Some(t))
        } else {
            return Err(Error::InvalidArgument(
                "no data source: pass --data-csv, --idx-images/--idx-labels or --teacher-width".into(),
            ));
        };
        let data = match self.max_samples {
            Some(n) => data.head(n),
            None => data,
        };
        let kind = self.loss.unwrap_or(if data.has_labels() {
            LossKind::SoftmaxCrossEntropy
        } else {
            LossKind::Squared
        });
        Ok(Loaded { data, teacher, kind })
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "data_csv": self.data_csv,
            "idx_images": self.idx_images,
            "idx_labels": self.idx_labels,
            "max_samples": self.max_samples,
            "teacher_width": self.teacher_width,
            "input_dim": self.input_dim,
            "samples": self.samples,
            "data_seed": self.data_seed,
        })
    }
}

pub fn load_model(path: &Path) -> Result<Network> {
    Network::from_json(&fs::read_to_string(path)?)
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, body),
        None => {
            io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} is empty")));
    }
    items
        .iter()
        .map(|x| {
            x.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad entry {x:?} in {what}")))
        })
        .collect()
}

pub fn summary(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json serializes") + "\n"
}
