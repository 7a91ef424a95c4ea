//! CSV matrices (with a header row) and format dispatch by extension.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{bmat, write_atomic, MatrixFormat};
use crate::math::DenseMatrix;

pub fn matrix_to_csv(m: &DenseMatrix, header: Option<&[String]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<String> = match header {
        Some(h) if h.len() == m.cols() => h.to_vec(),
        Some(h) => {
            return Err(Error::validation(format!(
                "{} header names for {} columns",
                h.len(),
                m.cols()
            )))
        }
        None => (0..m.cols()).map(|c| format!("c{c}")).collect(),
    };
    w.write_record(&names).map_err(csv_err)?;
    for r in m.iter_rows() {
        // `{}` on f32 is the shortest string that parses back to the same bits
        w.write_record(r.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::format("CSV", e.to_string()))
}

pub fn matrix_from_csv(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let cols = rdr.headers().map_err(csv_err)?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != cols {
            return Err(Error::format(
                "CSV",
                format!("row {rows} has {} fields, header has {cols}", rec.len()),
            ));
        }
        for f in rec.iter() {
            data.push(
                f.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::format("CSV", format!("row {rows}: {f:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols, data)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("CSV", e.to_string())
}

pub fn format_of(path: &Path) -> MatrixFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
        _ => MatrixFormat::Bmat,
    }
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    match format_of(path) {
        MatrixFormat::Bmat => bmat::load(path),
        MatrixFormat::Csv => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            matrix_from_csv(&bytes)
        }
    }
}

pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    match format_of(path) {
        MatrixFormat::Bmat => bmat::save(path, m),
        MatrixFormat::Csv => write_atomic(path, &matrix_to_csv(m, None)?),
    }
}

/// Writes a CSV with string columns.
pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format("CSV", e.to_string()))?;
    write_atomic(path, &bytes)
}
