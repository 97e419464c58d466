//! Numeric data matrix with an explicit missingness mask.
//!
//! Values are stored column-major because every consumer (forest fitting,
//! column summaries, per-variable metrics) walks whole columns. Missing cells
//! hold [`PLACEHOLDER`]; nothing reads them without consulting the mask.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Value stored in cells that the mask marks as missing.
pub const PLACEHOLDER: f64 = 0.0;

/// Token written for (and parsed as) a missing cell, besides the empty field.
pub const NA_TOKEN: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl DataMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput(
                "matrix needs at least one column".into(),
            ));
        }
        if names.len() != columns.len() {
            return Err(Error::Shape(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(Error::InvalidInput("matrix needs at least one row".into()));
        }
        if let Some((j, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != n_rows) {
            return Err(Error::Shape(format!(
                "column {j} has {} rows, expected {n_rows}",
                c.len()
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate column name {name:?}"
                )));
            }
        }
        Ok(Self {
            n_rows,
            names,
            columns,
        })
    }

    /// Builds a matrix with generated names `V1..Vp`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=columns.len()).map(|j| format!("V{j}")).collect();
        Self::new(names, columns)
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Shape(format!(
                "row of length {} for {p} columns",
                r.len()
            )));
        }
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::new(names, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Overwrites one cell. Non-finite values are rejected with a panic since
    /// they can only come from a bug upstream.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            value.is_finite(),
            "non-finite value written to ({row}, {col})"
        );
        self.columns[col][row] = value;
    }

    pub(crate) fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.columns[j]
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Every column except `skip`, in index order.
    pub(crate) fn columns_except(&self, skip: usize) -> Vec<&[f64]> {
        self.columns
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != skip)
            .map(|(_, c)| c.as_slice())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    n_rows: usize,
    columns: Vec<Vec<bool>>,
}

impl MissingMask {
    /// A mask with nothing missing.
    pub fn none(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            columns: vec![vec![false; n_rows]; n_cols],
        }
    }

    pub fn from_columns(columns: Vec<Vec<bool>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::Shape("mask columns have unequal lengths".into()));
        }
        Ok(Self { n_rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.columns[col][row]
    }

    pub fn set(&mut self, row: usize, col: usize, missing: bool) {
        self.columns[col][row] = missing;
    }

    pub fn column(&self, col: usize) -> &[bool] {
        &self.columns[col]
    }

    pub fn missing_count(&self, col: usize) -> usize {
        self.columns[col].iter().filter(|&&m| m).count()
    }

    pub fn total_missing(&self) -> usize {
        (0..self.n_cols()).map(|j| self.missing_count(j)).sum()
    }

    /// Rows with at least one missing cell.
    pub fn incomplete_rows(&self) -> usize {
        (0..self.n_rows)
            .filter(|&i| self.columns.iter().any(|c| c[i]))
            .count()
    }

    pub fn observed_rows(&self, col: usize) -> Vec<usize> {
        positions(&self.columns[col], false)
    }

    pub fn missing_rows(&self, col: usize) -> Vec<usize> {
        positions(&self.columns[col], true)
    }

    pub fn check_shape(&self, matrix: &DataMatrix) -> Result<()> {
        if self.n_rows != matrix.n_rows() || self.n_cols() != matrix.n_cols() {
            return Err(Error::Shape(format!(
                "mask is {}x{}, matrix is {}x{}",
                self.n_rows,
                self.n_cols(),
                matrix.n_rows(),
                matrix.n_cols()
            )));
        }
        Ok(())
    }
}

fn positions(flags: &[bool], want: bool) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m == want)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSummary {
    pub col: usize,
    pub n_observed: usize,
    pub mean_observed: f64,
    /// Sample standard deviation (n−1 denominator); 0 with a single observation.
    pub sd_observed: f64,
}

pub fn column_summary(
    matrix: &DataMatrix,
    mask: &MissingMask,
    col: usize,
) -> Result<ColumnSummary> {
    let mean = observed_mean(matrix, mask, col)?;
    let (n, ss) = matrix
        .column(col)
        .iter()
        .zip(mask.column(col))
        .filter(|(_, &m)| !m)
        .fold((0usize, 0.0), |(n, ss), (v, _)| {
            (n + 1, ss + (v - mean).powi(2))
        });
    let sd = if n > 1 {
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ColumnSummary {
        col,
        n_observed: n,
        mean_observed: mean,
        sd_observed: sd,
    })
}

/// Mean of the observed cells of `col`.
pub fn observed_mean(matrix: &DataMatrix, mask: &MissingMask, col: usize) -> Result<f64> {
    let (n, sum) = matrix
        .column(col)
        .iter()
        .zip(mask.column(col))
        .filter(|(_, &m)| !m)
        .fold((0usize, 0.0), |(n, s), (v, _)| (n + 1, s + v));
    if n == 0 {
        return Err(Error::UnimputableColumn {
            col,
            name: matrix.names()[col].clone(),
        });
    }
    Ok(sum / n as f64)
}

/// Replaces every masked cell by its column's observed mean.
pub fn initialize_missing(matrix: &DataMatrix, mask: &MissingMask) -> Result<DataMatrix> {
    mask.check_shape(matrix)?;
    let mut out = matrix.clone();
    for j in 0..matrix.n_cols() {
        if mask.missing_count(j) == 0 {
            continue;
        }
        let mean = observed_mean(matrix, mask, j)?;
        for i in mask.missing_rows(j) {
            out.columns[j][i] = mean;
        }
    }
    Ok(out)
}

/// Columns with missing cells, fewest missing first, ties by column index.
pub fn imputation_order(mask: &MissingMask) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = (0..mask.n_cols())
        .map(|j| (mask.missing_count(j), j))
        .filter(|&(count, _)| count > 0)
        .collect();
    cols.sort_unstable();
    cols.into_iter().map(|(_, j)| j).collect()
}

/// Parses a CSV with a header row. Empty fields and `NA` are missing.
pub fn read_csv<R: Read>(reader: R) -> Result<(DataMatrix, MissingMask)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let p = names.len();
    let mut columns = vec![Vec::new(); p];
    let mut mask = vec![Vec::new(); p];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != p {
            return Err(Error::Parse {
                row,
                col: record.len().min(p),
                msg: format!("expected {p} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field == NA_TOKEN {
                columns[j].push(PLACEHOLDER);
                mask[j].push(true);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: j + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: j + 1,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            columns[j].push(v);
            mask[j].push(false);
        }
    }
    let matrix = DataMatrix::new(names, columns)?;
    let mask = MissingMask::from_columns(mask)?;
    Ok((matrix, mask))
}

/// Writes `matrix` as CSV; cells masked in `mask` are written as `NA`.
pub fn write_csv<W: Write>(
    writer: W,
    matrix: &DataMatrix,
    mask: Option<&MissingMask>,
) -> Result<()> {
    if let Some(m) = mask {
        m.check_shape(matrix)?;
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(matrix.names())?;
    let mut fields = Vec::with_capacity(matrix.n_cols());
    for i in 0..matrix.n_rows() {
        fields.clear();
        for j in 0..matrix.n_cols() {
            if mask.is_some_and(|m| m.is_missing(i, j)) {
                fields.push(NA_TOKEN.to_string());
            } else {
                fields.push(format_value(matrix.get(i, j)));
            }
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}
