use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{HtlError, Result};
use crate::points::Points;

/// Labelled binary classification sample with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Points,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Points, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(HtlError::Degenerate("dataset has no samples".into()));
        }
        if features.len() != labels.len() {
            return Err(HtlError::Dimension {
                expected: features.len(),
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(HtlError::Domain(format!("label {bad} is not -1 or +1")));
        }
        Ok(Dataset { features, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &Points {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> (&[f64], f64) {
        (self.features.row(i), self.labels[i])
    }

    /// The dataset with sample `i` removed.
    pub fn without(&self, i: usize) -> Result<Dataset> {
        if self.n() < 2 {
            return Err(HtlError::Degenerate(
                "cannot remove a sample from a one-point dataset".into(),
            ));
        }
        if i >= self.n() {
            return Err(HtlError::Dimension {
                expected: self.n(),
                got: i,
            });
        }
        let mut labels = self.labels.clone();
        labels.remove(i);
        Ok(Dataset {
            features: self.features.without(i),
            labels,
        })
    }

    /// Reads a CSV with a header row, `d` feature columns and a final label column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let width = rdr
            .headers()
            .map_err(|e| HtlError::Parse(format!("csv header: {e}")))?
            .len();
        if width < 2 {
            return Err(HtlError::Parse(
                "dataset needs at least one feature column and a label column".into(),
            ));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| HtlError::Parse(format!("csv row {}: {e}", line + 1)))?;
            if record.len() != width {
                return Err(HtlError::Parse(format!(
                    "csv row {} has {} fields, expected {width}",
                    line + 1,
                    record.len()
                )));
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    HtlError::Parse(format!("csv row {} column {}: '{field}'", line + 1, col + 1))
                })?;
                if col + 1 == width {
                    labels.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        let features = Points::new(width - 1, data).map_err(|e| HtlError::Parse(e.to_string()))?;
        Dataset::new(features, labels).map_err(|e| HtlError::Parse(e.to_string()))
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| HtlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Dataset::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        let to_err = |e: csv::Error| HtlError::Parse(e.to_string());
        w.write_record(&header).map_err(to_err)?;
        for (x, y) in self.features.rows().zip(&self.labels) {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(format!("{}", *y as i64));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|source| HtlError::Io {
            path: "<csv writer>".into(),
            source,
        })
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| HtlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(file)
    }
}
