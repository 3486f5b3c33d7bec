//! Binary dataset files: `cols u32`, `rows u32` (little-endian), then `rows × cols`
//! f64 values row-major. The last column is the label (`> 0` is the positive class).

use std::path::Path;

use saps_core::objectives::Dataset;

use crate::error::{Result, SapsError};

fn invalid(msg: impl Into<String>) -> SapsError {
    SapsError::Core(saps_core::Error::Validation(msg.into()))
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 8 {
        return Err(invalid("dataset file shorter than its 8-byte header"));
    }
    let cols = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if cols < 2 {
        return Err(invalid("dataset needs at least one feature column and a label column"));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| invalid("dataset dimensions overflow"))?;
    let body = &bytes[8..];
    if body.len() != expected {
        return Err(invalid(format!(
            "dataset header promises {rows}x{cols} values ({expected} bytes), file has {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Dataset::from_labeled_rows(cols, &data)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read(path)?)
}

/// Inverse of [`parse_dataset`], for fixtures and tools.
pub fn encode_dataset(cols: usize, data: &[f64]) -> Vec<u8> {
    let rows = data.len() / cols;
    let mut out = Vec::with_capacity(8 + data.len() * 8);
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
