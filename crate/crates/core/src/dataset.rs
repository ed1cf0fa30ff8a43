//! Column-major unbinned datasets.
//!
//! CSV layout: first line is a comma-separated header, every following line one entry.
//! No quoting, `.` as decimal point, values written with the shortest representation that
//! parses back to the same `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::graph::Observable;

/// Contiguous read-only run of values handed from one computation to the next.
pub type BatchView<'a> = &'a [f64];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty file")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{text}` as a number")]
    Parse { row: usize, column: String, text: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("row index {index} out of bounds for {n_rows} rows")]
    RowOutOfBounds { index: usize, n_rows: usize },
    #[error("column `{name}` has {len} values, expected {expected}")]
    LengthMismatch { name: String, len: usize, expected: usize },
}

/// Immutable table with one contiguous column per observable.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    observables: Vec<Observable>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
    dropped: usize,
}

impl DataSet {
    /// Builds a dataset from columns given in schema order. Entries with any value outside
    /// its observable's range are dropped and counted.
    pub fn from_columns(schema: &[Observable], columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if columns.len() != schema.len() {
            return Err(DataError::MissingColumn(
                schema.get(columns.len()).map(|o| o.name.clone()).unwrap_or_default(),
            ));
        }
        for (i, o) in schema.iter().enumerate() {
            if schema[..i].iter().any(|p| p.name == o.name) {
                return Err(DataError::DuplicateColumn(o.name.clone()));
            }
        }
        let expected = columns.first().map_or(0, Vec::len);
        for (o, c) in schema.iter().zip(&columns) {
            if c.len() != expected {
                return Err(DataError::LengthMismatch {
                    name: o.name.clone(),
                    len: c.len(),
                    expected,
                });
            }
        }
        let keep: Vec<bool> = (0..expected)
            .map(|r| schema.iter().zip(&columns).all(|(o, c)| o.contains(c[r])))
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        let columns = if dropped == 0 {
            columns
        } else {
            columns
                .into_iter()
                .map(|c| c.into_iter().zip(&keep).filter_map(|(v, k)| k.then_some(v)).collect())
                .collect()
        };
        Ok(Self {
            observables: schema.to_vec(),
            columns,
            n_rows: expected - dropped,
            dropped,
        })
    }

    pub fn from_csv(path: impl AsRef<Path>, schema: &[Observable]) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text, schema)
    }

    pub fn from_csv_str(text: &str, schema: &[Observable]) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DataError::Empty)?;
        let header: Vec<&str> = header.split(',').map(str::trim).collect();
        let positions = schema
            .iter()
            .map(|o| {
                header
                    .iter()
                    .position(|h| *h == o.name)
                    .ok_or_else(|| DataError::MissingColumn(o.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut columns = vec![Vec::new(); schema.len()];
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(DataError::FieldCount {
                    row: line_no + 1,
                    expected: header.len(),
                    found: fields.len(),
                });
            }
            for ((col, &pos), o) in columns.iter_mut().zip(&positions).zip(schema) {
                let v = fields[pos].parse::<f64>().map_err(|_| DataError::Parse {
                    row: line_no + 1,
                    column: o.name.clone(),
                    text: fields[pos].to_owned(),
                })?;
                col.push(v);
            }
        }
        Self::from_columns(schema, columns)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.observables.iter().map(|o| o.name.as_str()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in 0..self.n_rows {
            for (k, c) in self.columns.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{:?}", c[r]).expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    /// Entries discarded at load time because a value fell outside its observable range.
    pub fn dropped_rows(&self) -> usize {
        self.dropped
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn column(&self, name: &str) -> Result<BatchView<'_>, DataError> {
        self.observables
            .iter()
            .position(|o| o.name == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_owned()))
    }

    pub fn row(&self, index: usize) -> Result<BTreeMap<&str, f64>, DataError> {
        if index >= self.n_rows {
            return Err(DataError::RowOutOfBounds {
                index,
                n_rows: self.n_rows,
            });
        }
        Ok(self
            .observables
            .iter()
            .zip(&self.columns)
            .map(|(o, c)| (o.name.as_str(), c[index]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(lo: f64, hi: f64) -> Vec<Observable> {
        vec![Observable::new("x", lo, hi)]
    }

    #[test]
    fn loads_simple_csv() {
        let ds = DataSet::from_csv_str("x\n1.0\n2.0\n", &x(0.0, 5.0)).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.column("x").unwrap(), &[1.0, 2.0]);
        assert_eq!(ds.dropped_rows(), 0);
    }

    #[test]
    fn drops_out_of_range_rows() {
        let ds = DataSet::from_csv_str("x\n1.0\n2.0\n", &x(0.0, 1.5)).unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.dropped_rows(), 1);
        assert_eq!(ds.column("x").unwrap(), &[1.0]);
    }

    #[test]
    fn missing_column() {
        let err = DataSet::from_csv_str("y\n1.0\n", &x(0.0, 5.0)).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(n) if n == "x"));
    }

    #[test]
    fn empty_file() {
        assert!(matches!(DataSet::from_csv_str("", &x(0.0, 1.0)), Err(DataError::Empty)));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = DataSet::from_csv_str("y,x\n1,2\n3,abc\n", &x(0.0, 5.0)).unwrap_err();
        match err {
            DataError::Parse { row, column, text } => {
                assert_eq!((row, column.as_str(), text.as_str()), (3, "x", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_order_insensitive() {
        let schema = vec![Observable::new("x", 0.0, 10.0), Observable::new("y", 0.0, 10.0)];
        let ds = DataSet::from_csv_str("y,x\n1,2\n3,4\n", &schema).unwrap();
        assert_eq!(ds.column("x").unwrap(), &[2.0, 4.0]);
        assert_eq!(ds.column("y").unwrap(), &[1.0, 3.0]);
    }

    #[test]
    fn column_and_row_access() {
        let ds = DataSet::from_csv_str("x\n1.0\n2.0\n", &x(0.0, 5.0)).unwrap();
        assert!(matches!(ds.column("z"), Err(DataError::UnknownColumn(_))));
        assert_eq!(ds.column("x").unwrap().len(), ds.n_rows());
        assert_eq!(ds.row(0).unwrap()["x"], 1.0);
        assert!(matches!(ds.row(2), Err(DataError::RowOutOfBounds { .. })));
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = DataSet::from_csv_str("x\n", &x(0.0, 1.0)).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.to_csv_string(), "x\n");
    }
}
