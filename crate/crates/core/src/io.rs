// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV datasets: first column `y`, remaining columns covariates. Values are
//! written with 17 significant digits so a write/read cycle is exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{MosegError, Result};

/// Reads a dataset. With `has_header = false` columns are named `x1, ...`.
/// Parse errors report the 1-based line and column of the offending cell.
pub fn read_dataset<R: Read>(reader: R, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let first_line = usize::from(has_header) + 1;
    let mut width = names.as_ref().map(Vec::len);
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = first_line + i;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, expected_len, .. } => MosegError::Parse {
                row: line,
                column: (*len as usize).min(*expected_len as usize) + 1,
                message: format!("expected {expected_len} fields, found {len}"),
            },
            _ => MosegError::Csv(e),
        })?;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(MosegError::Parse {
                row: line,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| MosegError::Parse {
                row: line,
                column: j + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(MosegError::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let w = width.unwrap_or(0);
    if w < 2 {
        return Err(MosegError::Parse {
            row: first_line,
            column: w + 1,
            message: "need a response column and at least one covariate".into(),
        });
    }
    if rows == 0 {
        return Err(MosegError::Parse {
            row: first_line,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let table = Array2::from_shape_vec((rows, w), values).expect("rectangular table");
    let y: Array1<f64> = table.column(0).to_owned();
    let x = table.slice(ndarray::s![.., 1..]).to_owned();
    match names {
        Some(n) => Dataset::with_columns(y, x, n[1..].to_vec()),
        None => Dataset::new(y, x),
    }
}

pub fn read_dataset_path(path: &Path, has_header: bool) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, has_header)
}

/// Writes `y,<covariate names>` followed by one row per observation.
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend(data.columns().iter().cloned());
    w.write_record(&header)?;
    for t in 0..data.n() {
        let mut rec = Vec::with_capacity(data.p() + 1);
        rec.push(format!("{:.16e}", data.y()[t]));
        rec.extend(data.x().row(t).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_path(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_values() {
        let text = "y,a,b\n1.5,2,3\n-1,0.25,1e-3\n";
        let d = read_dataset(text.as_bytes(), true).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.columns(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.y()[1], -1.0);
        assert_eq!(d.x()[(1, 1)], 1e-3);
    }

    #[test]
    fn positional_without_header() {
        let d = read_dataset("1,2\n3,4\n".as_bytes(), false).unwrap();
        assert_eq!(d.columns(), &["x1".to_string()]);
        assert_eq!(d.x()[(1, 0)], 4.0);
    }

    #[test]
    fn malformed_cell_reports_position() {
        let err = read_dataset("y,a\n1,2\n3,abc\n".as_bytes(), true).unwrap_err();
        match err {
            MosegError::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("unexpected {e:?}"),
        }
        assert!(err_is_data(read_dataset("y,a\n1,2\n3\n".as_bytes(), true).unwrap_err()));
        assert!(err_is_data(read_dataset("y,a\n1,NaN\n".as_bytes(), true).unwrap_err()));
        assert!(err_is_data(read_dataset("y\n1\n".as_bytes(), true).unwrap_err()));
        assert!(err_is_data(read_dataset("y,a\n".as_bytes(), true).unwrap_err()));
    }

    fn err_is_data(e: MosegError) -> bool {
        e.is_data_error()
    }

    #[test]
    fn ragged_row_position() {
        match read_dataset("y,a,b\n1,2,3\n4,5\n".as_bytes(), true).unwrap_err() {
            MosegError::Parse { row, column, .. } => assert_eq!((row, column), (3, 3)),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let y = Array1::from(vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567]);
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 + 0.7).powf(j as f64 + 0.3) / 7.0);
        let d = Dataset::new(y, x).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), true).unwrap();
        assert_eq!(back, d);
    }
}
