//! Dataset representation, CSV ingestion, and validation for the
//! hybrid-control-trial observation structure O = (D, A, X, Y).
//!
//! `D` flags trial participation (0 = external control), `A` the binary
//! treatment, `X` a fixed-width covariate vector, and `Y` a binary outcome.
//! External rows are controls by construction, so `D = 0` forces `A = 0`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Trial-participation indicator (1 = randomized trial, 0 = external control).
    pub d: u8,
    /// Treatment indicator.
    pub a: u8,
    /// Covariate vector; binary covariates are stored as 0.0/1.0.
    pub x: Vec<f64>,
    /// Binary outcome.
    pub y: u8,
}

impl Observation {
    pub fn new(d: u8, a: u8, x: Vec<f64>, y: u8) -> Self {
        Observation { d, a, x, y }
    }
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub d: String,
    pub a: String,
    pub y: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            d: "d".into(),
            a: "a".into(),
            y: "y".into(),
            covariates: vec!["x1".into()],
        }
    }
}

/// Severity of a dataset violation. Warnings leave the dataset analyzable
/// (an RCT-only dataset has no external controls but supports RCT analysis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} at row {}", self.message, r),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Validated collection of observations with arm bookkeeping.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct HctDataset {
    rows: Vec<Observation>,
    k: usize,
    n1: usize,
    n0: usize,
}

impl HctDataset {
    /// Build a dataset, rejecting error-severity violations. Warning-level
    /// conditions (no external controls) are allowed through.
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let ds = Self::new_unchecked(rows)?;
        if let Some(v) = validate(&ds)
            .into_iter()
            .find(|v| v.severity == Severity::Error)
        {
            return Err(Error::Invariant {
                row: v.row,
                message: v.message,
            });
        }
        Ok(ds)
    }

    fn new_unchecked(rows: Vec<Observation>) -> Result<Self> {
        let k = rows.first().map(|r| r.x.len()).unwrap_or(0);
        let n1 = rows.iter().filter(|r| r.d == 1).count();
        let n0 = rows.len() - n1;
        Ok(HctDataset { rows, k, n1, n0 })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Observation {
        &self.rows[i]
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    /// Covariate dimension.
    pub fn k(&self) -> usize {
        self.k
    }

    /// The d=1 rows as their own dataset plus the original row indices.
    pub fn trial_subset(&self) -> Result<(HctDataset, Vec<usize>)> {
        let mut rows = Vec::with_capacity(self.n1);
        let mut ids = Vec::with_capacity(self.n1);
        for (i, r) in self.rows.iter().enumerate() {
            if r.d == 1 {
                rows.push(r.clone());
                ids.push(i);
            }
        }
        Ok((HctDataset::new(rows)?, ids))
    }

    /// Copy with covariate `j` removed, for leave-one-out benchmarking.
    pub fn drop_covariate(&self, j: usize) -> Result<HctDataset> {
        if j >= self.k {
            return Err(Error::Config(format!(
                "covariate index {j} out of range (k = {})",
                self.k
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut x = r.x.clone();
                x.remove(j);
                Observation::new(r.d, r.a, x, r.y)
            })
            .collect();
        HctDataset::new(rows)
    }

    /// Copy with an extra covariate column appended.
    pub fn append_covariate(&self, values: &[f64]) -> Result<HctDataset> {
        if values.len() != self.n() {
            return Err(Error::Config(format!(
                "appended covariate has {} values for {} rows",
                values.len(),
                self.n()
            )));
        }
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, &v)| {
                let mut x = r.x.clone();
                x.push(v);
                Observation::new(r.d, r.a, x, r.y)
            })
            .collect();
        HctDataset::new(rows)
    }
}

/// Enumerate every invariant violation; empty exactly when the dataset is
/// fully valid (the no-external-controls case is reported as a warning).
pub fn validate(ds: &HctDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let err = |row, message: String| Violation {
        severity: Severity::Error,
        row,
        message,
    };

    if ds.rows.is_empty() {
        out.push(err(None, "empty dataset".into()));
        return out;
    }
    let mut n11 = 0usize;
    let mut n10 = 0usize;
    for (i, r) in ds.rows.iter().enumerate() {
        let row = Some(i + 1);
        if r.d > 1 {
            out.push(err(row, format!("non-binary trial indicator d={}", r.d)));
        }
        if r.a > 1 {
            out.push(err(row, format!("non-binary treatment a={}", r.a)));
        }
        if r.y > 1 {
            out.push(err(row, format!("non-binary outcome y={}", r.y)));
        }
        if r.d == 0 && r.a == 1 {
            out.push(err(row, "external unit with a=1".into()));
        }
        if r.x.len() != ds.k {
            out.push(err(
                row,
                format!("covariate length {} differs from {}", r.x.len(), ds.k),
            ));
        }
        if r.x.iter().any(|v| !v.is_finite()) {
            out.push(err(row, "non-finite covariate".into()));
        }
        if r.d == 1 && r.a == 1 {
            n11 += 1;
        }
        if r.d == 1 && r.a == 0 {
            n10 += 1;
        }
    }
    if ds.k == 0 {
        out.push(err(None, "no covariates".into()));
    }
    if n11 == 0 {
        out.push(err(None, "no treated trial units".into()));
    }
    if n10 == 0 {
        out.push(err(None, "no control trial units".into()));
    }
    if ds.n0 == 0 {
        out.push(Violation {
            severity: Severity::Warning,
            row: None,
            message: "no external controls".into(),
        });
    }
    out
}

/// CSV ingestion options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvOptions {
    pub delimiter: char,
    pub columns: ColumnMap,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: ',',
            columns: ColumnMap::default(),
        }
    }
}

/// Load and validate a dataset from CSV. Row order is preserved; rows are
/// numbered from 1 (the line after the header) in error messages.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<HctDataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, opts)
}

pub fn load_csv_reader<R: std::io::Read>(reader: R, opts: &CsvOptions) -> Result<HctDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "column `{name}` not found in header [{}]",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let d_col = col(&opts.columns.d)?;
    let a_col = col(&opts.columns.a)?;
    let y_col = col(&opts.columns.y)?;
    let x_cols = opts
        .columns
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = idx + 1;
        let field = |c: usize, name: &str| -> Result<f64> {
            let raw = record.get(c).ok_or_else(|| Error::Parse {
                row: row_no,
                column: name.into(),
                message: "missing field".into(),
            })?;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                return Err(Error::Parse {
                    row: row_no,
                    column: name.into(),
                    message: "empty cell".into(),
                });
            }
            trimmed.parse::<f64>().map_err(|e| Error::Parse {
                row: row_no,
                column: name.into(),
                message: e.to_string(),
            })
        };
        let binary = |c: usize, name: &str| -> Result<u8> {
            let v = field(c, name)?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Invariant {
                    row: Some(row_no),
                    message: format!("non-binary {name}={v}"),
                })
            }
        };
        let d = binary(d_col, "d")?;
        let a = binary(a_col, "a")?;
        let y = match binary(y_col, "y") {
            Ok(v) => v,
            Err(Error::Invariant { row, .. }) => {
                return Err(Error::Invariant {
                    row,
                    message: "non-binary outcome".into(),
                })
            }
            Err(e) => return Err(e),
        };
        let mut x = Vec::with_capacity(x_cols.len());
        for (xc, name) in x_cols.iter().zip(&opts.columns.covariates) {
            let v = field(*xc, name)?;
            if !v.is_finite() {
                return Err(Error::Invariant {
                    row: Some(row_no),
                    message: format!("non-finite covariate `{name}`"),
                });
            }
            x.push(v);
        }
        rows.push(Observation::new(d, a, x, y));
    }
    HctDataset::new(rows)
}

/// Write a dataset back to CSV with the same column layout. Numeric content
/// round-trips exactly: floats use the shortest representation that parses
/// back to the same bits.
pub fn write_csv<W: Write>(ds: &HctDataset, writer: W, opts: &CsvOptions) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(opts.delimiter as u8)
        .from_writer(writer);
    let mut header = vec![
        opts.columns.d.clone(),
        opts.columns.a.clone(),
        opts.columns.y.clone(),
    ];
    header.extend(opts.columns.covariates.iter().cloned());
    wtr.write_record(&header)?;
    for r in ds.rows() {
        let mut rec = vec![r.d.to_string(), r.a.to_string(), r.y.to_string()];
        rec.extend(r.x.iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
