//! "ROM1" binary matrix files: the ASCII magic `ROM1`, little-endian `u32`
//! rows and cols, then `rows·cols` little-endian `f64` values in row-major
//! order. Loading validates symmetry (max asymmetry ≤ 1e-9·max|entry|).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;

pub const MAGIC: &[u8; 4] = b"ROM1";
const HEADER_LEN: usize = 12;
/// Relative asymmetry accepted on load.
pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn encode(a: &SymMatrix) -> Vec<u8> {
    let p = a.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p * p);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    for i in 0..p {
        for j in 0..p {
            out.extend_from_slice(&a.get(i, j).to_le_bytes());
        }
    }
    out
}

/// Decodes the raw payload without any symmetry requirement.
pub fn decode_raw(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected \"ROM1\"".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {rows}x{cols} ({count} bytes)",
            payload.len()
        )));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

/// Decodes and validates a symmetric matrix.
pub fn decode(bytes: &[u8]) -> Result<SymMatrix> {
    let raw = decode_raw(bytes)?;
    if raw.nrows() != raw.ncols() || raw.nrows() == 0 {
        return Err(Error::Validation(format!("{}x{} is not a non-empty square matrix", raw.nrows(), raw.ncols())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite entry".into()));
    }
    let asym = SymMatrix::relative_asymmetry(&raw);
    if asym > SYMMETRY_TOL {
        return Err(Error::Validation(format!("matrix is not symmetric (relative asymmetry {asym:e})")));
    }
    // Within tolerance; averaging leaves exactly symmetric input unchanged.
    crate::matcore::symmetrize(&raw)
}

pub fn write<W: Write>(a: &SymMatrix, mut w: W) -> Result<()> {
    w.write_all(&encode(a))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<SymMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(a: &SymMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(a))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<SymMatrix> {
    decode(&std::fs::read(path)?)
}
