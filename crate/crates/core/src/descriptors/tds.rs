//! `.tds` descriptor grids.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size      | content                                  |
//! |--------|-----------|------------------------------------------|
//! | 0      | 4         | magic `TDS1`                             |
//! | 4      | 4         | `h` as u32                               |
//! | 8      | 4         | `w` as u32                               |
//! | 12     | 4         | `d` as u32                               |
//! | 16     | 4·h·w·d   | IEEE-754 f32 values, row-major `(r, c, k)` |
//!
//! Files must be exactly `16 + 4·h·w·d` bytes long.

use std::path::Path;

use super::set::DescriptorSet;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TDS1";
pub const HEADER_LEN: usize = 16;

pub fn encode(set: &DescriptorSet) -> Result<Vec<u8>> {
    let dims = [set.height(), set.width(), set.dim()];
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * set.descriptors().len());
    out.extend_from_slice(MAGIC);
    for v in dims {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in set.descriptors() {
        let f = x as f32;
        if !f.is_finite() {
            return Err(Error::invalid(format!("value {x} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DescriptorSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("missing TDS1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (h, w, d) = (word(1), word(2), word(3));
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::format(format!("grid {h}x{w}x{d} has a zero axis")));
    }
    let count = h
        .checked_mul(w)
        .and_then(|m| m.checked_mul(d))
        .ok_or_else(|| Error::format("grid size overflows"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format("grid size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{h}x{w}x{d} grid needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("non-finite value in descriptor file"));
    }
    let m = Matrix::from_shape_vec((h * w, d), values).expect("length checked");
    DescriptorSet::new(m, h, w)
}

pub fn read_file(path: &Path) -> Result<DescriptorSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, set: &DescriptorSet) -> Result<()> {
    std::fs::write(path, encode(set)?).map_err(|e| Error::io(path, e))
}
