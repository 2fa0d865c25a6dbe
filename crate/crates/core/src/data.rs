//! Feature batches, the feature CSV format and synthetic data.
//!
//! A feature file is comma-separated text. The header's first column must be
//! `label`; the remaining column names are free-form and fix the feature
//! width. Every data row holds a `0` (real) or `1` (spoof) label followed by
//! that many finite decimal values.
//!
//! ```text
//! label,f0,f1,f2
//! 0,0.25,-1.5,3e-2
//! 1,4.0,0.0,1.25
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng::{self, Stream};

pub const LABEL_REAL: u8 = 0;
pub const LABEL_SPOOF: u8 = 1;

/// Row-major feature matrix with one binary label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
}

impl FeatureBatch {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(contract("feature width must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(contract(format!(
                "{} values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > LABEL_SPOOF) {
            return Err(contract(format!("label {l} outside {{0, 1}}")));
        }
        crate::geometry::check_finite(&features, "feature batch")?;
        Ok(FeatureBatch {
            features,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(contract("ragged feature rows"));
        }
        Self::new(rows.concat(), dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(self.dim)
    }

    /// Stacks `other` under `self`.
    pub fn concat(&self, other: &FeatureBatch) -> Result<FeatureBatch> {
        if self.dim != other.dim {
            return Err(contract(format!(
                "cannot concat widths {} and {}",
                self.dim, other.dim
            )));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(FeatureBatch {
            features,
            dim: self.dim,
            labels,
        })
    }

    /// New batch made of the given row indices, in order.
    pub fn select(&self, idx: &[usize]) -> FeatureBatch {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        FeatureBatch {
            features,
            dim: self.dim,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Parses a feature file from any reader.
pub fn parse_features<R: Read>(reader: R) -> Result<FeatureBatch> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with a `label` column".into(),
        });
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "header names no feature columns".into(),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        let label = match &record[0] {
            "0" => LABEL_REAL,
            "1" => LABEL_SPOOF,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("label must be 0 or 1, found `{other}`"),
                })
            }
        };
        labels.push(label);
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {col}: `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {col}: non-finite value `{field}`"),
                });
            }
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch("feature file has no data rows".into()));
    }
    FeatureBatch::new(features, dim, labels)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureBatch> {
    parse_features(File::open(path)?)
}

/// Writes a batch in the feature-file format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_features<W: Write>(batch: &FeatureBatch, mut out: W) -> Result<()> {
    write!(out, "label")?;
    for j in 0..batch.dim {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for (row, label) in batch.rows().zip(&batch.labels) {
        write!(out, "{label}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_features(batch: &FeatureBatch, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(batch, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Two isotropic Gaussian clusters: real samples around `real_mean · 1`, spoof
/// samples shifted from it by `separation · real_scale` along a seeded random
/// unit direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub real_mean: f64,
    pub real_scale: f64,
    pub spoof_scale: f64,
    /// Centre distance in units of `real_scale`.
    pub separation: f64,
    pub train_real: usize,
    pub test_real: usize,
    pub test_spoof: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 32,
            real_mean: 0.5,
            real_scale: 0.25,
            spoof_scale: 0.25,
            separation: 10.0,
            train_real: 2000,
            test_real: 500,
            test_spoof: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Parses and validates a JSON spec; missing keys take their defaults.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.train_real == 0 {
            return Err(contract("synthetic dim and train_real must be positive"));
        }
        for (name, v) in [
            ("real_scale", self.real_scale),
            ("spoof_scale", self.spoof_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(contract(format!("{name} must be positive")));
            }
        }
        if !(self.real_mean.is_finite() && self.separation.is_finite() && self.separation >= 0.0) {
            return Err(contract(
                "real_mean and separation must be finite, separation ≥ 0",
            ));
        }
        if self.test_real + self.test_spoof == 0 {
            return Err(contract("test split would be empty"));
        }
        Ok(())
    }
}

/// Returns `(train, test)`: train holds only real rows, test holds the real
/// rows followed by the spoof rows.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureBatch, FeatureBatch)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let direction = {
        let mut d = rng::standard_normal_vec(&mut rng, spec.dim);
        let n = crate::geometry::norm(&d);
        d.iter_mut().for_each(|v| *v /= n);
        d
    };
    let real_center = vec![spec.real_mean; spec.dim];
    let shift = spec.separation * spec.real_scale;
    let spoof_center: Vec<f64> = real_center
        .iter()
        .zip(&direction)
        .map(|(m, d)| m + shift * d)
        .collect();

    let cluster = |center: &[f64], scale: f64, count: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut values = rng::standard_normal_vec(rng, count * spec.dim);
        for row in values.chunks_mut(spec.dim) {
            for (v, m) in row.iter_mut().zip(center) {
                *v = m + scale * *v;
            }
        }
        values
    };

    let train = cluster(&real_center, spec.real_scale, spec.train_real, &mut rng);
    let mut test = cluster(&real_center, spec.real_scale, spec.test_real, &mut rng);
    test.extend(cluster(
        &spoof_center,
        spec.spoof_scale,
        spec.test_spoof,
        &mut rng,
    ));

    let train = FeatureBatch::new(train, spec.dim, vec![LABEL_REAL; spec.train_real])?;
    let mut labels = vec![LABEL_REAL; spec.test_real];
    labels.extend(std::iter::repeat_n(LABEL_SPOOF, spec.test_spoof));
    let test = FeatureBatch::new(test, spec.dim, labels)?;
    Ok((train, test))
}
