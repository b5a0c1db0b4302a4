//! Field snapshot files and CSV export.
//!
//! Binary layout, little-endian: `u64 dimension, u64 N, f64 L, u64 components,
//! f64 time`, then the real samples of each component in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{GridSpec, SpectralField};

const HEADER_BYTES: usize = 40;

pub fn encode_snapshot(f: &SpectralField, t: f64) -> Vec<u8> {
    let g = f.grid();
    let values = f.to_values();
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * g.len() * values.len());
    out.extend_from_slice(&(g.dimension as u64).to_le_bytes());
    out.extend_from_slice(&(g.points as u64).to_le_bytes());
    out.extend_from_slice(&g.length.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for c in &values {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(SpectralField, f64)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Io(format!("snapshot has {} bytes, shorter than its header", bytes.len())));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8 bytes") };
    let d = u64::from_le_bytes(word(0)) as usize;
    let n = u64::from_le_bytes(word(1)) as usize;
    let l = f64::from_le_bytes(word(2));
    let comps = u64::from_le_bytes(word(3)) as usize;
    let t = f64::from_le_bytes(word(4));
    let grid = GridSpec::new(d, n, l).map_err(|e| Error::Io(format!("bad snapshot header: {e}")))?;
    let expected = HEADER_BYTES + 8 * grid.len() * comps;
    if bytes.len() != expected || comps == 0 {
        return Err(Error::Io(format!("snapshot size {} does not match its header ({expected})", bytes.len())));
    }
    let body = &bytes[HEADER_BYTES..];
    let values: Vec<Vec<f64>> = (0..comps)
        .map(|c| {
            body[8 * c * grid.len()..8 * (c + 1) * grid.len()]
                .chunks_exact(8)
                .map(|w| f64::from_le_bytes(w.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok((SpectralField::from_values(grid, &values)?, t))
}

pub fn write_snapshot(path: &Path, f: &SpectralField, t: f64) -> Result<()> {
    fs::write(path, encode_snapshot(f, t)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_snapshot(path: &Path) -> Result<(SpectralField, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_snapshot(&bytes)
}

/// `x,c0,c1,...` rows for a one-dimensional field.
pub fn field_csv(f: &SpectralField) -> Result<String> {
    let g = f.grid();
    if g.dimension != 1 {
        return Err(Error::Argument("CSV export is available for d=1 only".into()));
    }
    let values = f.to_values();
    let mut s = String::from("x");
    for c in 0..values.len() {
        s.push_str(&format!(",c{c}"));
    }
    s.push('\n');
    for i in 0..g.len() {
        s.push_str(&format!("{:e}", g.coordinate(i)[0]));
        for c in &values {
            s.push_str(&format!(",{:e}", c[i]));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
