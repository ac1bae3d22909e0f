//! Observational data `(Y, A, S, X)`, CSV ingestion and cross-fitting folds.
//!
//! Records are validated on construction: treatment and sensitive attribute
//! are binary, the outcome is finite and every covariate vector has the same
//! length. Fold labels are absent until [`ObservationalDataset::assign_folds`]
//! is called.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowIssue};

/// Default number of cross-fitting folds.
pub const DEFAULT_FOLDS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Outcome; larger is better.
    pub y: f64,
    pub a: bool,
    pub s: bool,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, a: bool, s: bool, x: Vec<f64>) -> Self {
        Self { y, a, s, x }
    }

    /// The pre-treatment vector `W = (S, X₁, …, X_d)`.
    pub fn w(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.x.len() + 1);
        w.push(f64::from(u8::from(self.s)));
        w.extend_from_slice(&self.x);
        w
    }
}

/// Fold labels `B_i ∈ {0, …, K−1}` (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    k: usize,
    labels: Vec<usize>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &b in &self.labels {
            sizes[b] += 1;
        }
        sizes
    }

    /// Indices of the records in fold `b`.
    pub fn members(&self, b: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == b).collect()
    }
}

/// An immutable sample of observations sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    records: Vec<Observation>,
    covariate_names: Vec<String>,
    folds: Option<Folds>,
}

impl ObservationalDataset {
    pub fn new(records: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let d = covariate_names.len();
        let issues: Vec<RowIssue> = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let line = i + 2;
                if r.x.len() != d {
                    Some(RowIssue {
                        line,
                        message: format!("expected {d} covariates, found {}", r.x.len()),
                    })
                } else if !r.y.is_finite() {
                    Some(RowIssue {
                        line,
                        message: "outcome is not finite".into(),
                    })
                } else if r.x.iter().any(|v| !v.is_finite()) {
                    Some(RowIssue {
                        line,
                        message: "covariate is not finite".into(),
                    })
                } else {
                    None
                }
            })
            .collect();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(Self {
            records,
            covariate_names,
            folds: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariate dimension `d` (excluding the sensitive attribute).
    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Observation {
        &self.records[i]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Names of the entries of `W`: `s` followed by the covariates.
    pub fn w_names(&self) -> Vec<String> {
        std::iter::once("s".to_string())
            .chain(self.covariate_names.iter().cloned())
            .collect()
    }

    pub fn folds(&self) -> Option<&Folds> {
        self.folds.as_ref()
    }

    pub fn y(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn a(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.a).collect()
    }

    pub fn s(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.s).collect()
    }

    /// `W` rows for every record.
    pub fn w_rows(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(Observation::w).collect()
    }

    /// Randomly partitions the records into `k` folds whose sizes differ by
    /// at most one. Deterministic for a given seed.
    pub fn assign_folds(&self, k: usize, seed: u64) -> Result<Self> {
        let n = self.len();
        if k < 2 || k.saturating_mul(2) > n {
            return Err(Error::Parameter(format!(
                "fold count k={k} must satisfy 2 <= k <= n/2 (n={n})"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut labels = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            labels[i] = pos % k;
        }
        Ok(Self {
            folds: Some(Folds { k, labels }),
            ..self.clone()
        })
    }

    /// Attaches explicit fold labels (zero-based).
    pub fn with_folds(&self, k: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: labels.len(),
            });
        }
        if k < 2 || labels.iter().any(|&b| b >= k) {
            return Err(Error::Parameter(format!(
                "fold labels must lie in 0..{k} with k >= 2"
            )));
        }
        Ok(Self {
            folds: Some(Folds { k, labels }),
            ..self.clone()
        })
    }

    /// Subset of records, folds dropped.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            folds: None,
        }
    }

    /// Same dataset with every outcome replaced by `f(y)`.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.y = f(r.y);
        }
        out
    }

    /// Same dataset with `S` replaced by `1 − S`.
    pub fn flip_sensitive(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.s = !r.s;
        }
        out
    }

    /// Writes the dataset with columns `y,a,s,<covariates>` (plus `fold` when
    /// folds are assigned). Floats are written in shortest round-trip form.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "a".into(), "s".into()];
        header.extend(self.covariate_names.iter().cloned());
        if self.folds.is_some() {
            header.push("fold".into());
        }
        w.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row = vec![
                r.y.to_string(),
                u8::from(r.a).to_string(),
                u8::from(r.s).to_string(),
            ];
            row.extend(r.x.iter().map(|v| v.to_string()));
            if let Some(f) = &self.folds {
                row.push(f.label(i).to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// A binary column, either numeric `0/1` or string-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinaryColumn {
    Name(String),
    Mapped {
        column: String,
        /// Raw value that encodes 1.
        positive: String,
        /// Raw value that encodes 0. When set, rows with any other value are
        /// dropped; otherwise every non-positive value encodes 0.
        #[serde(default)]
        negative: Option<String>,
    },
}

impl BinaryColumn {
    pub fn column(&self) -> &str {
        match self {
            BinaryColumn::Name(c) => c,
            BinaryColumn::Mapped { column, .. } => column,
        }
    }
}

/// A covariate column, numeric or mapped from string levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateColumn {
    Name(String),
    Mapped {
        column: String,
        levels: BTreeMap<String, f64>,
    },
}

impl CovariateColumn {
    pub fn column(&self) -> &str {
        match self {
            CovariateColumn::Name(c) => c,
            CovariateColumn::Mapped { column, .. } => column,
        }
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub treatment: BinaryColumn,
    pub sensitive: BinaryColumn,
    pub covariates: Vec<CovariateColumn>,
}

impl Schema {
    /// Plain numeric schema with the given covariate names.
    pub fn numeric(outcome: &str, treatment: &str, sensitive: &str, covariates: &[&str]) -> Self {
        Self {
            outcome: outcome.into(),
            treatment: BinaryColumn::Name(treatment.into()),
            sensitive: BinaryColumn::Name(sensitive.into()),
            covariates: covariates.iter().map(|c| CovariateColumn::Name(c.to_string())).collect(),
        }
    }

    /// The schema written by [`ObservationalDataset::write_csv`].
    pub fn for_dataset(data: &ObservationalDataset) -> Self {
        let names: Vec<&str> = data.covariate_names().iter().map(String::as_str).collect();
        Self::numeric("y", "a", "s", &names)
    }
}

enum Binary {
    One,
    Zero,
    Skip,
}

fn parse_binary(spec: &BinaryColumn, raw: &str) -> std::result::Result<Binary, String> {
    match spec {
        BinaryColumn::Name(_) => match raw.trim().parse::<f64>() {
            Ok(v) if v == 1.0 => Ok(Binary::One),
            Ok(v) if v == 0.0 => Ok(Binary::Zero),
            _ => Err(format!("value {raw:?} is not binary")),
        },
        BinaryColumn::Mapped {
            positive, negative, ..
        } => {
            let raw = raw.trim();
            if raw == positive {
                Ok(Binary::One)
            } else {
                match negative {
                    Some(neg) if raw == neg => Ok(Binary::Zero),
                    Some(_) => Ok(Binary::Skip),
                    None => Ok(Binary::Zero),
                }
            }
        }
    }
}

/// Summary of rows dropped by value filters during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_filtered: usize,
}

/// Loads an RFC 4180 CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ObservationalDataset> {
    load_csv_with_report(path, schema).map(|(d, _)| d)
}

pub fn load_csv_with_report(
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<(ObservationalDataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV from any reader; see [`load_csv`].
pub fn read_csv<R: std::io::Read>(
    reader: R,
    schema: &Schema,
) -> Result<(ObservationalDataset, LoadReport)> {
    if schema.covariates.is_empty() {
        return Err(Error::Schema("at least one covariate column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(schema.treatment.column())?;
    let s_col = find(schema.sensitive.column())?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| find(c.column()))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        report.rows_read += 1;
        let field = |c: usize| row.get(c).unwrap_or("").trim();
        let mut problems = Vec::new();

        let y = match field(y_col) {
            "" => {
                problems.push(format!("missing {}", schema.outcome));
                None
            }
            raw => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    problems.push(format!("{}: {raw:?} is not a finite number", schema.outcome));
                    None
                }
            },
        };
        let mut skip = false;
        let mut binary = |spec: &BinaryColumn, col: usize, problems: &mut Vec<String>| {
            let raw = field(col);
            if raw.is_empty() {
                problems.push(format!("missing {}", spec.column()));
                return None;
            }
            match parse_binary(spec, raw) {
                Ok(Binary::One) => Some(true),
                Ok(Binary::Zero) => Some(false),
                Ok(Binary::Skip) => {
                    skip = true;
                    None
                }
                Err(e) => {
                    problems.push(format!("{}: {e}", spec.column()));
                    None
                }
            }
        };
        let a = binary(&schema.treatment, a_col, &mut problems);
        let s = binary(&schema.sensitive, s_col, &mut problems);
        if skip {
            report.rows_filtered += 1;
            continue;
        }
        let mut x = Vec::with_capacity(x_cols.len());
        for (spec, &c) in schema.covariates.iter().zip(&x_cols) {
            let raw = field(c);
            if raw.is_empty() {
                problems.push(format!("missing {}", spec.column()));
                continue;
            }
            let v = match spec {
                CovariateColumn::Name(_) => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
                CovariateColumn::Mapped { levels, .. } => levels.get(raw).copied(),
            };
            match v {
                Some(v) => x.push(v),
                None => problems.push(format!("{}: unrecognized value {raw:?}", spec.column())),
            }
        }
        if problems.is_empty() {
            records.push(Observation::new(y.unwrap(), a.unwrap(), s.unwrap(), x));
        } else {
            issues.push(RowIssue {
                line,
                message: problems.join(", "),
            });
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let names = schema.covariates.iter().map(|c| c.column().to_string()).collect();
    Ok((ObservationalDataset::new(records, names)?, report))
}
