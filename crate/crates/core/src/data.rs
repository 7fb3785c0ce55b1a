//! Labeled datasets: a matrix of inputs plus regression targets or class labels.

use std::io::{BufRead, Write};

use crate::error::{dim_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One target row per sample.
    Values(Matrix),
    /// Class index per sample.
    Labels { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Matrix,
    targets: Targets,
    pub source: String,
}

impl LabeledDataset {
    pub fn new(inputs: Matrix, targets: Targets, source: impl Into<String>) -> Result<Self> {
        let n = inputs.rows();
        match &targets {
            Targets::Values(y) if y.rows() != n => return dim_err(format!("{n} inputs but {} target rows", y.rows())),
            Targets::Labels { labels, classes } => {
                if labels.len() != n {
                    return dim_err(format!("{n} inputs but {} labels", labels.len()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::InvalidArgument(format!(
                        "label {bad} out of range for {classes} classes"
                    )));
                }
            }
            _ => {}
        }
        Ok(LabeledDataset {
            inputs,
            targets,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Width the network output must have: target columns or class count.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Values(y) => y.cols(),
            Targets::Labels { classes, .. } => *classes,
        }
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn has_labels(&self) -> bool {
        matches!(self.targets, Targets::Labels { .. })
    }

    /// First `n` samples (or all of them when `n >= len`).
    pub fn head(&self, n: usize) -> LabeledDataset {
        if n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let cols = self.input_dim();
        let mut x = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            x.extend_from_slice(self.input(i));
        }
        let inputs = Matrix::from_vec_unchecked(idx.len(), cols, x);
        let targets = match &self.targets {
            Targets::Values(y) => {
                let mut v = Vec::with_capacity(idx.len() * y.cols());
                for &i in idx {
                    v.extend_from_slice(y.row(i));
                }
                Targets::Values(Matrix::from_vec_unchecked(idx.len(), y.cols(), v))
            }
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        LabeledDataset {
            inputs,
            targets,
            source: self.source.clone(),
        }
    }

    /// Writes one row per sample: inputs, then the target (value columns or label).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.input_dim()).map(|j| format!("x{j}")).collect();
        match &self.targets {
            Targets::Values(y) if y.cols() == 1 => header.push("y".into()),
            Targets::Values(y) => header.extend((1..=y.cols()).map(|j| format!("y{j}"))),
            Targets::Labels { .. } => header.push("label".into()),
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.input(i).iter().map(|v| fmt_num(*v)).collect();
            match &self.targets {
                Targets::Values(y) => fields.extend(y.row(i).iter().map(|v| fmt_num(*v))),
                Targets::Labels { labels, .. } => fields.push(labels[i].to_string()),
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Reads the format written by [`LabeledDataset::write_csv`] for scalar
    /// regression targets: a header line, then rows whose last column is `y`.
    pub fn read_csv<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            offset: 0,
            message: "empty csv".into(),
        })??;
        let width = header.split(',').count();
        if width < 2 {
            return Err(Error::Parse {
                offset: 0,
                message: "need at least one input and one target column".into(),
            });
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut offset = header.len() + 1;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                offset += line.len() + 1;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::Parse {
                    offset,
                    message: format!("expected {width} fields, found {}", fields.len()),
                });
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                    offset,
                    message: format!("bad number {f:?}"),
                })?;
                if j + 1 == width {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
            offset += line.len() + 1;
        }
        let n = y.len();
        let inputs = Matrix::new(n, width - 1, x)?;
        let targets = Targets::Values(Matrix::new(n, 1, y)?);
        LabeledDataset::new(inputs, targets, source)
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_regression() {
        let x = Matrix::from_rows(&[vec![1.0, -0.5], vec![0.25, 3.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let ds = LabeledDataset::new(x, Targets::Values(y), "t").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x1,x2,y\n1,-0.5,1\n"));
        let back = LabeledDataset::read_csv(&buf[..], "t").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_length_mismatch_and_bad_labels() {
        let x = Matrix::zeros(3, 2);
        let y = Matrix::zeros(2, 1);
        assert!(LabeledDataset::new(x.clone(), Targets::Values(y), "t").is_err());
        let t = Targets::Labels {
            labels: vec![0, 1, 2],
            classes: 2,
        };
        assert!(LabeledDataset::new(x, t, "t").is_err());
    }
}
