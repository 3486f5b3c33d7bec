//! Seed-synchronized Bernoulli masks and the masked exchange.
//!
//! Both ends of an exchange rebuild the same mask from the round seed, so
//! only the selected values ever travel; indices never do.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, ProtocolError, Result};
use crate::rng::SplitMix64;
use crate::types::ParameterVector;

/// Per-round inclusion bits over `0..n_dims`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskStream {
    seed: u64,
    ratio: u32,
    n_dims: usize,
    words: Vec<u64>,
    count: usize,
}

impl MaskStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    #[inline]
    pub fn included(&self, j: usize) -> bool {
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    /// Number of included indices.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_dims).filter(move |&j| self.included(j))
    }

    /// Mask from explicit bits. Only for tests and diagnostics; production masks
    /// always come from [`generate_mask`].
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Self {
            seed: 0,
            ratio: 0,
            n_dims: bits.len(),
            words,
            count: bits.iter().filter(|&&b| b).count(),
        }
    }
}

/// `⌊2^64 / c⌋`; index `j` is kept iff the `j`-th SplitMix64 output is below it.
fn inclusion_threshold(ratio: u32) -> u64 {
    ((1u128 << 64) / ratio as u128) as u64
}

pub fn generate_mask(seed: u64, ratio: u32, n_dims: usize) -> Result<MaskStream> {
    if ratio == 0 {
        return Err(Error::validation("compression ratio c must be >= 1"));
    }
    if n_dims == 0 {
        return Err(Error::validation("model dimension must be >= 1"));
    }
    let mut words = vec![0u64; n_dims.div_ceil(64)];
    let mut count = 0;
    if ratio == 1 {
        for j in 0..n_dims {
            words[j / 64] |= 1 << (j % 64);
        }
        count = n_dims;
    } else {
        let threshold = inclusion_threshold(ratio);
        let mut rng = SplitMix64::new(seed);
        for j in 0..n_dims {
            if rng.next_u64() < threshold {
                words[j / 64] |= 1 << (j % 64);
                count += 1;
            }
        }
    }
    Ok(MaskStream {
        seed,
        ratio,
        n_dims,
        words,
        count,
    })
}

/// The values a worker sends to its peer: `x ∘ m` without the zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePayload {
    pub round: u64,
    pub sender: u32,
    pub values: Vec<f64>,
}

impl SparsePayload {
    pub fn count(&self) -> usize {
        self.values.len()
    }
}

pub fn extract_payload(x: &ParameterVector, mask: &MaskStream, round: u64, sender: u32) -> Result<SparsePayload> {
    if x.len() != mask.n_dims() {
        return Err(Error::validation(alloc::format!(
            "model has {} entries, mask covers {}",
            x.len(),
            mask.n_dims()
        )));
    }
    let values = mask.indices().map(|j| x[j]).collect();
    Ok(SparsePayload { round, sender, values })
}

/// Expands a payload back into a dense vector with zeros where the mask is off.
pub fn scatter(payload: &SparsePayload, mask: &MaskStream) -> Result<Vec<f64>> {
    check_count(mask, payload)?;
    let mut dense = vec![0.0; mask.n_dims()];
    for (j, v) in mask.indices().zip(&payload.values) {
        dense[j] = *v;
    }
    Ok(dense)
}

fn check_count(mask: &MaskStream, peer: &SparsePayload) -> Result<()> {
    if peer.count() != mask.count() {
        return Err(ProtocolError::CountMismatch {
            expected: mask.count(),
            got: peer.count(),
        }
        .into());
    }
    Ok(())
}

/// Averages the masked coordinates with the peer's values, ½ each; the rest stay put.
pub fn merge_masked(x: &ParameterVector, mask: &MaskStream, peer: &SparsePayload) -> Result<ParameterVector> {
    let mut out = x.clone();
    merge_masked_in_place(&mut out, mask, peer)?;
    Ok(out)
}

pub fn merge_masked_in_place(x: &mut ParameterVector, mask: &MaskStream, peer: &SparsePayload) -> Result<()> {
    if x.len() != mask.n_dims() {
        return Err(Error::validation(alloc::format!(
            "model has {} entries, mask covers {}",
            x.len(),
            mask.n_dims()
        )));
    }
    check_count(mask, peer)?;
    for (j, v) in mask.indices().zip(&peer.values) {
        x[j] = (x[j] + v) / 2.0;
    }
    Ok(())
}
