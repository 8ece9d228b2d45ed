//! CSV ingestion, categorical encoding, z-normalization and random splits.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: ColumnValues,
}

/// A parsed CSV file with declared column kinds, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    n_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn label_column(&self) -> &RawColumn {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("RawTable always carries exactly one label column")
    }

    fn label_values(&self) -> &[String] {
        match &self.label_column().values {
            ColumnValues::Text(v) => v,
            ColumnValues::Numeric(_) => unreachable!("label column is stored as text"),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str, categorical: &[String]) -> Result<RawTable> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column, categorical)
}

/// Parses comma-delimited text with a header line.
pub fn read_csv<R: Read>(reader: R, label_column: &str, categorical: &[String]) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;
    for c in categorical {
        if !header.contains(c) {
            return Err(Error::MissingColumn(c.clone()));
        }
    }
    let kinds: Vec<ColumnKind> = header
        .iter()
        .enumerate()
        .map(|(i, h)| {
            if i == label_idx {
                ColumnKind::Label
            } else if categorical.contains(h) {
                ColumnKind::Categorical
            } else {
                ColumnKind::Numeric
            }
        })
        .collect();

    let mut values: Vec<ColumnValues> = kinds
        .iter()
        .map(|k| match k {
            ColumnKind::Numeric => ColumnValues::Numeric(Vec::new()),
            _ => ColumnValues::Text(Vec::new()),
        })
        .collect();

    let mut n_rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            match &mut values[j] {
                ColumnValues::Numeric(col) => {
                    let v: f64 = field.parse().map_err(|_| Error::UnparseableNumeric {
                        line,
                        column: header[j].clone(),
                        value: field.to_owned(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::UnparseableNumeric {
                            line,
                            column: header[j].clone(),
                            value: field.to_owned(),
                        });
                    }
                    col.push(v);
                }
                ColumnValues::Text(col) => col.push(field.to_owned()),
            }
        }
        n_rows += 1;
    }

    let columns = header
        .into_iter()
        .zip(kinds)
        .zip(values)
        .map(|((name, kind), values)| RawColumn { name, kind, values })
        .collect();
    Ok(RawTable { columns, n_rows })
}

/// Feature matrix with contiguous 0-based integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, n_classes: usize, feature_names: Vec<String>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dims("label count", x.rows(), y.len()));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::dims("feature names", x.cols(), feature_names.len()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            x,
            y,
            n_classes,
            feature_names,
        })
    }

    /// Unnamed features `x0, x1, ...`.
    pub fn unnamed(x: Matrix, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        let names = (0..x.cols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, n_classes, names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Replaces the features with their z-normalized form using statistics
    /// from `pre`.
    pub fn normalized(&self, pre: &Preprocessor) -> Result<Dataset> {
        Ok(Dataset {
            x: pre.apply(&self.x)?,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureEncoding {
    Numeric { column: String },
    OneHot { column: String, values: Vec<String> },
}

/// Dictionaries produced by [`encode`]; re-applicable to new tables with the
/// same header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub features: Vec<FeatureEncoding>,
    pub labels: Vec<String>,
}

impl Encoder {
    pub fn n_features(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                FeatureEncoding::Numeric { .. } => 1,
                FeatureEncoding::OneHot { values, .. } => values.len(),
            })
            .sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_features());
        for f in &self.features {
            match f {
                FeatureEncoding::Numeric { column } => names.push(column.clone()),
                FeatureEncoding::OneHot { column, values } => {
                    names.extend(values.iter().map(|v| format!("{column}={v}")))
                }
            }
        }
        names
    }

    /// Encodes a table. Categorical values absent from the dictionary become
    /// an all-zero block; unknown labels are an error.
    pub fn transform(&self, table: &RawTable) -> Result<Dataset> {
        let n = table.n_rows();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        let d = self.n_features();
        let mut x = Matrix::zeros(n, d);
        let mut offset = 0;
        for f in &self.features {
            match f {
                FeatureEncoding::Numeric { column } => {
                    let col = table
                        .column(column)
                        .ok_or_else(|| Error::MissingColumn(column.clone()))?;
                    let ColumnValues::Numeric(vals) = &col.values else {
                        return Err(Error::InvalidConfig(format!("column `{column}` is not numeric")));
                    };
                    for (i, v) in vals.iter().enumerate() {
                        x.row_mut(i)[offset] = *v;
                    }
                    offset += 1;
                }
                FeatureEncoding::OneHot { column, values } => {
                    let col = table
                        .column(column)
                        .ok_or_else(|| Error::MissingColumn(column.clone()))?;
                    let ColumnValues::Text(vals) = &col.values else {
                        return Err(Error::InvalidConfig(format!("column `{column}` is not categorical")));
                    };
                    let index: HashMap<&str, usize> =
                        values.iter().enumerate().map(|(k, v)| (v.as_str(), k)).collect();
                    for (i, v) in vals.iter().enumerate() {
                        if let Some(&k) = index.get(v.as_str()) {
                            x.row_mut(i)[offset + k] = 1.0;
                        }
                    }
                    offset += values.len();
                }
            }
        }
        let label_index: HashMap<&str, usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(k, v)| (v.as_str(), k))
            .collect();
        let y = table
            .label_values()
            .iter()
            .map(|l| {
                label_index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown label `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(x, y, self.labels.len(), self.feature_names())
    }
}

/// One column per numeric feature, one-hot blocks for categoricals, labels
/// mapped to `0..C` in lexicographic order of their raw strings.
pub fn encode(table: &RawTable) -> Result<(Dataset, Encoder)> {
    if table.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    let mut features = Vec::new();
    for col in &table.columns {
        match (&col.kind, &col.values) {
            (ColumnKind::Numeric, _) => features.push(FeatureEncoding::Numeric {
                column: col.name.clone(),
            }),
            (ColumnKind::Categorical, ColumnValues::Text(vals)) => {
                let values: BTreeSet<&String> = vals.iter().collect();
                features.push(FeatureEncoding::OneHot {
                    column: col.name.clone(),
                    values: values.into_iter().cloned().collect(),
                });
            }
            _ => {}
        }
    }
    let labels: Vec<String> = table
        .label_values()
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .cloned()
        .collect();
    if labels.len() < 2 {
        return Err(Error::SingleClassLabel);
    }
    let encoder = Encoder { features, labels };
    let ds = encoder.transform(table)?;
    Ok((ds, encoder))
}

/// Per-feature z-normalization statistics fitted on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose training variance was zero; their std was replaced by 1.
    #[serde(default)]
    pub constant_columns: Vec<usize>,
}

impl Preprocessor {
    /// Fits population (1/N) statistics and returns the transformed training
    /// matrix.
    pub fn fit_transform(train: &Matrix) -> Result<(Preprocessor, Matrix)> {
        let n = train.rows();
        if n < 2 {
            return Err(Error::TooFewSamples { required: 2, found: n });
        }
        let d = train.cols();
        let mut mean = vec![0.0; d];
        for row in train.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in train.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut constant_columns = Vec::new();
        let std = var
            .into_iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    constant_columns.push(j);
                    1.0
                }
            })
            .collect();
        let pre = Preprocessor {
            mean,
            std,
            constant_columns,
        };
        let z = pre.apply(train)?;
        Ok((pre, z))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::dims("preprocessor features", self.mean.len(), x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Index split used by [`split_70_30`]: a seeded uniform shuffle, the first
/// `floor(0.7 N)` indices train.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(Error::TooFewSamples { required: 10, found: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_train = n * 7 / 10;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_70_30(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}
