//! Headerless numeric CSV: one matrix row per line, comma separated.
//!
//! Values are written with Rust's shortest round-trip formatting, so a write followed
//! by a read reproduces every `f64` bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use otkit_core::Matrix;

use crate::error::{CliError, CliResult};

pub fn read_matrix_csv(path: &Path) -> CliResult<Matrix> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_matrix(file, path)
}

/// Parses from any reader; `path` only labels error messages.
pub fn parse_matrix<R: std::io::Read>(reader: R, path: &Path) -> CliResult<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if let Some(first) = rows.first() {
            if first.len() != record.len() {
                return Err(CliError::RaggedRows {
                    path: path.to_path_buf(),
                    line,
                    expected: first.len(),
                    found: record.len(),
                });
            }
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line,
                column: col + 1,
                text: field.to_string(),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no data", path.display())));
    }
    Ok(Matrix::from_rows(&rows)?)
}

/// Reads a vector stored as a single column, or as a single row.
pub fn read_vector_csv(path: &Path) -> CliResult<Vec<f64>> {
    let m = read_matrix_csv(path)?;
    match m.shape() {
        (_, 1) => Ok(m.into_vec()),
        (1, _) => Ok(m.into_vec()),
        (r, c) => Err(CliError::Validation(format!(
            "{}: expected a vector, found a {r}x{c} matrix",
            path.display()
        ))),
    }
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> CliResult<()> {
    write_text(path, &format_matrix(m))
}

pub fn write_vector_csv(path: &Path, v: &[f64]) -> CliResult<()> {
    let m = Matrix::new(v.len(), 1, v.to_vec())?;
    write_matrix_csv(path, &m)
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}
