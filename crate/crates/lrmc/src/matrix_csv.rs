//! Dense numeric matrices as CSV, one row per user. Input is headerless;
//! the only header accepted is the `c0,c1,...` row this module writes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use lrmc_core::env::RewardModel;
use lrmc_core::DMatrix;

#[derive(Debug, thiserror::Error)]
pub enum MatrixCsvError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: the file contains no rows")]
    Empty { path: PathBuf },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    Ragged { path: PathBuf, row: usize, expected: usize, found: usize },
    #[error("{path}: row {row}, column {column}: `{cell}` is not a finite number")]
    NotNumeric { path: PathBuf, row: usize, column: usize, cell: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: lrmc_core::Error },
}

/// Parses CSV text. Rows and columns in errors are 1-based; `origin` only
/// labels the messages.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<DMatrix<f64>, MatrixCsvError> {
    let path = || origin.to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|source| MatrixCsvError::Csv { path: path(), source })?;
        // A trailing empty line is not a row.
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        // The `c0,c1,...` header written by `write_matrix_csv`.
        if width.is_none() && record.iter().enumerate().all(|(j, cell)| cell == format!("c{j}")) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(MatrixCsvError::Ragged { path: path(), row: r + 1, expected, found: record.len() });
        }
        for (c, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(MatrixCsvError::NotNumeric { path: path(), row: r + 1, column: c + 1, cell: cell.into() })
                }
            }
        }
        rows += 1;
    }
    match width {
        Some(w) if rows > 0 => Ok(DMatrix::from_row_slice(rows, w, &values)),
        _ => Err(MatrixCsvError::Empty { path: path() }),
    }
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, MatrixCsvError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| MatrixCsvError::Io { path: path.to_path_buf(), source })?;
    parse_matrix(&text, path)
}

/// Reward model whose expected rewards are the file's matrix, verbatim.
pub fn load_matrix_csv(path: &Path, noise_variance_proxy: f64) -> Result<RewardModel, MatrixCsvError> {
    let p = read_matrix(path)?;
    RewardModel::from_dense(p, noise_variance_proxy).map_err(|source| MatrixCsvError::Model { path: path.to_path_buf(), source })
}

/// Writes `m` with a header row `c0,c1,...`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    File::create(path)?.write_all(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<DMatrix<f64>, MatrixCsvError> {
        parse_matrix(s, Path::new("t.csv"))
    }

    #[test]
    fn own_header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.0, 3.5, 1e-9, 0.0, 7.0]);
        write_matrix_csv(&path, &m).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("c0,c1,c2\n"));
        assert_eq!(read_matrix(&path).unwrap(), m);
        assert!(matches!(parse("a,b\n1,2\n"), Err(MatrixCsvError::NotNumeric { row: 1, .. })));
    }

    #[test]
    fn identity() {
        let m = parse("1,0\n0,1\n").unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
    }

    #[test]
    fn ragged_names_the_row() {
        let e = parse("1,2\n3").unwrap_err();
        assert!(matches!(e, MatrixCsvError::Ragged { row: 2, .. }));
        assert!(e.to_string().contains("row 2"));
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let e = parse("1,2\n3,x\n").unwrap_err();
        assert!(matches!(e, MatrixCsvError::NotNumeric { row: 2, column: 2, .. }));
        assert!(parse("1,nan\n").is_err());
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse(""), Err(MatrixCsvError::Empty { .. })));
        assert!(matches!(parse("\n\n"), Err(MatrixCsvError::Empty { .. })));
    }
}
