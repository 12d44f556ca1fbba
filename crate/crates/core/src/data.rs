//! Labelled datasets on the unit cube, with CSV ingestion.
//!
//! CSV rows are `x_1,...,x_n,label` with 1-based labels; in memory labels are
//! zero-based class indices.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    id: String,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Validation("dataset must contain at least one sample".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let n = inputs[0].len();
        if n == 0 {
            return Err(Error::Validation("inputs must have at least one feature".into()));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != n {
                return Err(Error::Validation(format!(
                    "sample {i} has {} features, expected {n}",
                    x.len()
                )));
            }
            if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Validation(format!(
                    "sample {i} has feature {v} outside [0, 1]"
                )));
            }
        }
        let id = content_id(&inputs, &labels);
        Ok(Dataset { inputs, labels, id })
    }

    /// Content hash identifying this dataset; attack bundles bind to it.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    /// One more than the largest label present.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Checks the dataset against a network's input and output dimensions.
    pub fn check_compatible(&self, input_dim: usize, classes: usize) -> Result<()> {
        if self.dim() != input_dim {
            return Err(Error::InputShape {
                expected: input_dim,
                got: self.dim(),
            });
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        Ok(())
    }

    /// Subset of samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() < 2 {
                return Err(Error::Parse {
                    line,
                    message: "expected at least one feature and a label".into(),
                });
            }
            let mut x = Vec::with_capacity(record.len() - 1);
            for field in record.iter().take(record.len() - 1) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: `{field}`"),
                })?;
                x.push(v);
            }
            let raw = &record[record.len() - 1];
            let label: usize = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("label is not a positive integer: `{raw}`"),
            })?;
            if label == 0 {
                return Err(Error::Validation(format!(
                    "line {line}: labels are 1-based, got 0"
                )));
            }
            inputs.push(x);
            labels.push(label - 1);
        }
        if inputs.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "no data rows".into(),
            });
        }
        Dataset::new(inputs, labels)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (x, y) in self.iter() {
            for v in x {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{}", y + 1).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn content_id(inputs: &[Vec<f64>], labels: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update((inputs.len() as u64).to_le_bytes());
    h.update((inputs[0].len() as u64).to_le_bytes());
    for (x, &y) in inputs.iter().zip(labels) {
        for v in x {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((y as u64).to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}
