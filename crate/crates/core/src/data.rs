//! Datasets: CSV ingestion, normalization and the extra-point transform.

use std::path::Path;

use thiserror::Error;

use crate::dims::UnitSpec;

/// `m` observations of `n` independent variables plus the dependent variable (last column).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub target: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub units: Option<UnitSpec>,
    /// Divisor applied to each column (variables then target); 1 when not normalized.
    pub divisors: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset has no rows")]
    Empty,
    #[error("header needs at least one variable and a target column")]
    Header,
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column '{column}': '{cell}' is not a number")]
    NonNumeric { row: usize, column: String, cell: String },
    #[error("unit file names '{0}', which is not a dataset column")]
    UnitMismatch(String),
    #[error("normalization divisor for '{0}' must be positive")]
    Divisor(String),
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("units: {0}")]
    Units(#[from] crate::dims::UnitError),
}

impl Dataset {
    pub fn new(names: Vec<String>, target: String, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, DataError> {
        if x.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, row) in x.iter().enumerate() {
            if row.len() != names.len() {
                return Err(DataError::Ragged { row: i + 1, expected: names.len() + 1, found: row.len() + 1 });
            }
        }
        let divisors = vec![1.0; names.len() + 1];
        Ok(Dataset { names, target, x, y, units: None, divisors })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn name_refs(&self) -> Vec<&str> {
        self.names.iter().map(String::as_str).collect()
    }

    /// Parses CSV text with a mandatory header; the last column is the target.
    pub fn from_csv_str(text: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header.iter().any(String::is_empty) {
            return Err(DataError::Header);
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            if rec.len() != header.len() {
                return Err(DataError::Ragged { row: i + 1, expected: header.len(), found: rec.len() });
            }
            let mut vals = Vec::with_capacity(rec.len());
            for (cell, col) in rec.iter().zip(&header) {
                let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    row: i + 1,
                    column: col.clone(),
                    cell: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonNumeric { row: i + 1, column: col.clone(), cell: cell.to_string() });
                }
                vals.push(v);
            }
            y.push(vals.pop().unwrap_or(0.0));
            x.push(vals);
        }
        let n = header.len() - 1;
        Dataset::new(header[..n].to_vec(), header[n].clone(), x, y)
    }

    pub fn load(path: &Path, units_path: Option<&Path>) -> Result<Self, DataError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| DataError::Io { path: p.display().to_string(), source })
        };
        let mut ds = Dataset::from_csv_str(&read(path)?)?;
        if let Some(up) = units_path {
            ds.set_units(UnitSpec::parse(&read(up)?)?)?;
        }
        Ok(ds)
    }

    pub fn set_units(&mut self, spec: UnitSpec) -> Result<(), DataError> {
        for (name, _) in &spec.vars {
            if !self.names.contains(name) && *name != self.target {
                return Err(DataError::UnitMismatch(name.clone()));
            }
        }
        self.units = Some(spec);
        Ok(())
    }

    fn column_index(&self, name: &str) -> Result<usize, DataError> {
        if name == self.target {
            return Ok(self.names.len());
        }
        self.names.iter().position(|n| n == name).ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    /// Divides a column by `divisor`, recording it so [`Dataset::denormalize`] can undo it.
    pub fn normalize(&mut self, column: &str, divisor: f64) -> Result<(), DataError> {
        if !(divisor > 0.0 && divisor.is_finite()) {
            return Err(DataError::Divisor(column.to_string()));
        }
        let j = self.column_index(column)?;
        if j == self.names.len() {
            self.y.iter_mut().for_each(|v| *v /= divisor);
        } else {
            self.x.iter_mut().for_each(|r| r[j] /= divisor);
        }
        self.divisors[j] *= divisor;
        Ok(())
    }

    /// Undoes every recorded normalization.
    pub fn denormalize(&mut self) {
        let n = self.names.len();
        for j in 0..=n {
            let d = self.divisors[j];
            if j == n {
                self.y.iter_mut().for_each(|v| *v *= d);
            } else {
                self.x.iter_mut().for_each(|r| r[j] *= d);
            }
            self.divisors[j] = 1.0;
        }
    }

    /// Appends the point `(v, ..., v)`.
    pub fn add_extra_point(&self, value: f64) -> Dataset {
        let mut out = self.clone();
        out.x.push(vec![value; self.names.len()]);
        out.y.push(value);
        out
    }

    /// Drops the last row; inverse of [`Dataset::add_extra_point`].
    pub fn remove_last_point(&self) -> Dataset {
        let mut out = self.clone();
        out.x.pop();
        out.y.pop();
        out
    }

    /// Smallest box containing every observation, per variable.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.names.len())
            .map(|j| {
                let lo = self.x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = self.x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.names.join(",");
        s.push(',');
        s.push_str(&self.target);
        s.push('\n');
        for (row, y) in self.x.iter().zip(&self.y) {
            let cells: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOLAR: &str = "m1,m2,d,p\n1,0.0553,0.3870,0.0880\n1,0.815,0.7233,0.2247\n";

    #[test]
    fn parses_header_and_rows() {
        let ds = Dataset::from_csv_str(SOLAR).unwrap();
        assert_eq!(ds.names, vec!["m1", "m2", "d"]);
        assert_eq!(ds.target, "p");
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.x[1][2], 0.7233);
    }

    #[test]
    fn errors() {
        assert!(matches!(Dataset::from_csv_str(""), Err(DataError::Header | DataError::Csv(_))));
        assert!(matches!(Dataset::from_csv_str("x,y\n"), Err(DataError::Empty)));
        assert!(matches!(Dataset::from_csv_str("x,y\n1\n"), Err(DataError::Ragged { .. })));
        assert!(matches!(Dataset::from_csv_str("x,y\n1,a\n"), Err(DataError::NonNumeric { .. })));
        let mut ds = Dataset::from_csv_str(SOLAR).unwrap();
        assert!(ds.set_units(UnitSpec::parse("q: mass").unwrap()).is_err());
        assert!(ds.normalize("p", 0.0).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let mut ds = Dataset::from_csv_str(SOLAR).unwrap();
        let orig = ds.clone();
        ds.normalize("p", 1000.0 * 24.0 * 60.0 * 60.0).unwrap();
        ds.normalize("m2", 5.972e24).unwrap();
        ds.denormalize();
        for (a, b) in ds.x.iter().flatten().chain(&ds.y).zip(orig.x.iter().flatten().chain(&orig.y)) {
            assert!(((a - b) / b).abs() < 1e-12);
        }
    }

    #[test]
    fn extra_point() {
        let ds = Dataset::from_csv_str("p,q\n2.7,30.6\n").unwrap();
        let e = ds.add_extra_point(0.001);
        assert_eq!(e.len(), 2);
        assert_eq!(e.y[1], 0.001);
        assert_eq!(e.remove_last_point(), ds);
    }
}
