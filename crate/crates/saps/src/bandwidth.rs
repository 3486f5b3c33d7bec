//! Bandwidth matrix sources: text files, random draws, and the bundled preset.

use std::path::Path;

use saps_core::{BandwidthMatrix, SplitMix64};

use crate::config::BandwidthSource;
use crate::error::{Result, SapsError};

/// Synthetic fourteen-site matrix (bytes/s). Plausible magnitudes only, not measurements.
pub const FOURTEEN_CITY: &str = include_str!("../data/fourteen_city.txt");

fn invalid(msg: impl Into<String>) -> SapsError {
    SapsError::Core(saps_core::Error::Validation(msg.into()))
}

/// Parses a whitespace-separated square matrix. `#` starts a comment; blank lines are ignored.
/// Asymmetric input is reduced to the slower direction.
pub fn parse_matrix(text: &str) -> Result<BandwidthMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| invalid(format!("line {}: {tok:?} is not a number", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("bandwidth file has no rows"));
    }
    Ok(BandwidthMatrix::from_rows(&rows)?)
}

pub fn load_matrix(path: &Path) -> Result<BandwidthMatrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Independent link speeds uniform in `(lo, hi]`, mirrored to keep the matrix symmetric.
pub fn uniform_matrix(n: usize, lo: f64, hi: f64, rng: &mut SplitMix64) -> Result<BandwidthMatrix> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(invalid(format!("uniform bandwidth needs 0 <= lo < hi, got ({lo}, {hi}]")));
    }
    let mut raw = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            // next_f64 is in [0, 1), so this lands in (lo, hi].
            let s = hi - (hi - lo) * rng.next_f64();
            raw[i * n + j] = s;
            raw[j * n + i] = s;
        }
    }
    Ok(BandwidthMatrix::symmetrize(n, &raw)?)
}

pub fn fourteen_city() -> BandwidthMatrix {
    parse_matrix(FOURTEEN_CITY).expect("bundled matrix parses")
}

/// Materializes the configured source. `rng` is only consumed by random sources.
pub fn build(source: &BandwidthSource, n: usize, rng: &mut SplitMix64) -> Result<BandwidthMatrix> {
    let b = match source {
        BandwidthSource::File { path } => load_matrix(path)?,
        BandwidthSource::Uniform { lo, hi } => uniform_matrix(n, *lo, *hi, rng)?,
        BandwidthSource::FourteenCity => fourteen_city(),
    };
    if b.n() != n {
        return Err(invalid(format!("bandwidth matrix is {0}x{0}, config has n = {n}", b.n())));
    }
    Ok(b)
}
