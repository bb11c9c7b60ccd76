//! Artifact writers: JSON, CSV, raw little-endian arrays and 8-bit PGM images.

use std::path::Path;

use azmi_scvae::fsutil::{f32_to_le_bytes, write_atomic};
use serde::Serialize;

use crate::CliError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<(), CliError> {
    write_atomic(path, &f32_to_le_bytes(values)).map_err(|e| CliError::io(path, e))
}

/// CSV with a header row; every record is rendered with `Display`.
pub fn write_csv<R, V>(path: &Path, header: &[&str], rows: R) -> Result<(), CliError>
where
    R: IntoIterator<Item = Vec<V>>,
    V: ToString,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let data_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(data_err)?;
    for row in rows {
        w.write_record(row.iter().map(ToString::to_string)).map_err(data_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| CliError::io(path, e))
}

/// Grid as CSV, one line per row, no header.
pub fn write_grid_csv(path: &Path, values: &[f64], cols: usize) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in values.chunks(cols) {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| CliError::io(path, e))
}

/// Binary PGM, linearly scaled from `[lo, hi]` to `[0, 255]`.
pub fn pgm_bytes(values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    let span = hi - lo;
    out.extend(values.iter().map(|&v| {
        if span > 0.0 && v.is_finite() {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize, range: Option<(f64, f64)>) -> Result<(), CliError> {
    let (lo, hi) = range.unwrap_or_else(|| value_range(values));
    write_atomic(path, &pgm_bytes(values, rows, cols, lo, hi)).map_err(|e| CliError::io(path, e))
}

pub fn value_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let b = pgm_bytes(&[0.0, 0.5, 1.0, 2.0, -1.0, f64::NAN], 2, 3, 0.0, 1.0);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 128, 255, 255, 0, 0]);
    }

    #[test]
    fn csv_written_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(&p, &["k", "v"], vec![vec![1.0, 0.5], vec![2.0, 0.25]]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "k,v\n1,0.5\n2,0.25\n");
    }
}
