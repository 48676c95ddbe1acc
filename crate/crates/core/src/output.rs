//! Sample dumps: CSV for vectors, binary PGM for toy images.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Pixel values map linearly from `[-PGM_RANGE, PGM_RANGE]` to `0..=255`.
pub const PGM_RANGE: f64 = 2.5;

/// One row per sample, columns `x0,x1,…`. Values use Rust's shortest
/// round-trip formatting, so reading the file back is bit-exact.
pub fn write_samples_csv(path: impl AsRef<Path>, samples: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (_, d) = samples.dims2()?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record((0..d).map(|j| format!("x{j}")))
        .map_err(|e| csv_err(path, e))?;
    for i in 0..samples.rows() {
        w.write_record(samples.row(i).iter().map(f64::to_string))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number {v:?}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

/// Writes one `side × side` sample as an 8-bit binary PGM (P5).
pub fn write_pgm(path: impl AsRef<Path>, pixels: &[f64], side: usize) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != side * side {
        return Err(Error::Shape(format!(
            "{} pixels do not form a {side}x{side} image",
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{side} {side}\n255\n").into_bytes();
    buf.extend(pixels.iter().map(|&v| {
        let u = (v + PGM_RANGE) / (2.0 * PGM_RANGE);
        (u.clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
