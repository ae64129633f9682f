//! Datasets: synthetic 2-D generators, CSV ingestion, splitting and
//! standardization.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::nnet::Label;
use crate::seeding;

/// Radius of the circle that blob centers are placed on.
pub const BLOB_RADIUS: f64 = 3.0;

/// Row-major feature matrix plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Vec<f64>,
    dim: usize,
    labels: Vec<Label>,
    /// 0 for regression targets.
    num_classes: usize,
}

/// Borrowed feature rows without labels.
///
/// Label-free code paths (discrepancy scores, the consistency loss) only ever
/// see this view.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(
            dim > 0 && data.len().is_multiple_of(dim),
            "ragged feature buffer"
        );
        Features { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Result<&'a [f64]> {
        if i >= self.len() {
            return Err(Error::Range {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<Label>,
        num_classes: usize,
    ) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::argument("feature rows have different lengths"));
        }
        Self::from_flat(name, rows.concat(), dim, labels, num_classes)
    }

    pub fn from_flat(
        name: impl Into<String>,
        features: Vec<f64>,
        dim: usize,
        labels: Vec<Label>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::argument("dataset needs at least one sample"));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        for label in &labels {
            match (*label, num_classes) {
                (Label::Class(c), k) if k > 0 && c < k => {}
                (Label::Real(y), 0) if y.is_finite() => {}
                _ => {
                    return Err(Error::argument(format!(
                        "label {label:?} invalid for {num_classes} classes"
                    )))
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            dim,
            labels,
            num_classes,
        })
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

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_classification(&self) -> bool {
        self.num_classes > 0
    }

    pub fn features(&self) -> Features<'_> {
        Features::new(&self.features, self.dim)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Range {
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::from_flat(
            self.name.clone(),
            features,
            self.dim,
            labels,
            self.num_classes,
        )
    }

    /// Random `(train, test)` split with `round(test_fraction·n)` test rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test_fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        if n_test == 0 || n_test >= self.len() {
            return Err(Error::config("split leaves an empty train or test set"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seeding::rng_for(seed));
        let (test, train) = order.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut table = CsvTable::new(&header);
        for (row, label) in self.features().rows().zip(&self.labels) {
            let y = match *label {
                Label::Class(c) => c.to_string(),
                Label::Real(v) => format!("{v:?}"),
            };
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            fields.push(y);
            let refs: Vec<&dyn std::fmt::Display> =
                fields.iter().map(|f| f as &dyn std::fmt::Display).collect();
            table.row(&refs);
        }
        table.as_str().to_string()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Two interleaved unit half-circles, `n/2` points each.
///
/// Class 0 lies on `(cos t, sin t)`, class 1 on `(1 − cos t, 0.5 − sin t)`,
/// with `t ~ U[0, π]` and isotropic Gaussian noise of standard deviation
/// `noise` added to both coordinates.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::argument(format!(
            "two-moons needs a positive even n, got {n}"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::argument("noise must be non-negative"));
    }
    let mut rng = seeding::rng_for(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::argument(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.random_range(0.0..=PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (dx, dy) = if noise > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        rows.push(vec![x + dx, y + dy]);
        labels.push(Label::Class(class));
    }
    Dataset::new("two_moons", rows, labels, 2)
}

/// Centre of blob `class` out of `k`, on the circle of radius [`BLOB_RADIUS`].
pub fn blob_center(class: usize, k: usize) -> [f64; 2] {
    let angle = 2.0 * PI * class as f64 / k as f64;
    [BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin()]
}

/// `k` isotropic Gaussian clusters; sample `i` belongs to class `i mod k`.
pub fn gen_blobs(n: usize, k: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k == 0 || k > n {
        return Err(Error::argument(format!(
            "need 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::argument("spread must be non-negative"));
    }
    let mut rng = seeding::rng_for(seed);
    let jitter = Normal::new(0.0, spread).map_err(|e| Error::argument(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let [cx, cy] = blob_center(class, k);
        let (dx, dy) = if spread > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        rows.push(vec![cx + dx, cy + dy]);
        labels.push(Label::Class(class));
    }
    Dataset::new("blobs", rows, labels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    Class,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Zero-based column holding the label.
    pub label_column: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub header: bool,
    #[serde(default)]
    pub label_kind: LabelKind,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    pub fn new(label_column: usize) -> Self {
        CsvSchema {
            label_column,
            delimiter: ',',
            header: true,
            label_kind: LabelKind::Class,
        }
    }
}

/// Reads a numeric CSV file; every column except `label_column` is a feature.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::config(
            "CSV delimiter must be a single ASCII character",
        ));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut width = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(parse_err(
                line,
                format!("expected {expected} fields, found {}", record.len()),
            ));
        }
        if schema.label_column >= record.len() {
            return Err(parse_err(
                line,
                format!(
                    "label column {} but only {} fields",
                    schema.label_column,
                    record.len()
                ),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {col}: `{field}` is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("column {col}: non-finite value")));
            }
            if col == schema.label_column {
                raw_labels.push((line, value));
            } else {
                features.push(value);
            }
        }
    }
    let width = width.ok_or_else(|| parse_err(0, "no data rows".into()))?;
    if width < 2 {
        return Err(parse_err(
            0,
            "need at least one feature column and a label".into(),
        ));
    }

    let (labels, num_classes) = match schema.label_kind {
        LabelKind::Real => (raw_labels.iter().map(|&(_, y)| Label::Real(y)).collect(), 0),
        LabelKind::Class => {
            let mut labels = Vec::with_capacity(raw_labels.len());
            for &(line, y) in &raw_labels {
                if y < 0.0 || y.fract() != 0.0 {
                    return Err(parse_err(
                        line,
                        format!("class label {y} is not a non-negative integer"),
                    ));
                }
                labels.push(Label::Class(y as usize));
            }
            let k = labels
                .iter()
                .map(|l| match l {
                    Label::Class(c) => c + 1,
                    Label::Real(_) => 0,
                })
                .max()
                .unwrap_or(0);
            (labels, k)
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::from_flat(name, features, width - 1, labels, num_classes)
}

/// Where an experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    Blobs {
        n: usize,
        classes: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::TwoMoons { n, noise } => gen_two_moons(*n, *noise, seed),
            DatasetSource::Blobs { n, classes, spread } => gen_blobs(*n, *classes, *spread, seed),
            DatasetSource::Csv { path, schema } => load_csv(path, schema),
        }
    }
}

/// Per-column affine standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero variance keep unit scale.
    pub fn fit(features: Features<'_>) -> Self {
        let n = features.len() as f64;
        let d = features.dim();
        let mut mean = vec![0.0; d];
        for row in features.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in features.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let features = data
            .features()
            .rows()
            .flat_map(|r| self.transform_row(r))
            .collect();
        Dataset::from_flat(
            data.name.clone(),
            features,
            data.dim,
            data.labels.clone(),
            data.num_classes,
        )
    }
}
