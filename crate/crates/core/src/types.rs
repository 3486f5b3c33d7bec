//! Domain types shared by every module.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A worker's flat dense model.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Symmetric pairwise link speeds in bytes/second with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthMatrix {
    n: usize,
    speeds: Vec<f64>,
}

impl BandwidthMatrix {
    /// Builds the matrix from a raw, possibly asymmetric, row-major `n×n` measurement.
    /// A link is only as fast as its slower direction.
    pub fn symmetrize(n: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != n * n {
            return Err(Error::validation(alloc::format!(
                "bandwidth matrix needs {} entries for n={n}, got {}",
                n * n,
                raw.len()
            )));
        }
        if let Some((idx, v)) = raw
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::validation(alloc::format!(
                "bandwidth entry ({}, {}) = {v} is negative or not finite",
                idx / n,
                idx % n
            )));
        }
        let mut speeds = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s = raw[i * n + j].min(raw[j * n + i]);
                speeds[i * n + j] = s;
                speeds[j * n + i] = s;
            }
        }
        Ok(Self { n, speeds })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("bandwidth matrix must be square"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::symmetrize(n, &flat)
    }

    /// Every off-diagonal link at the same speed.
    pub fn uniform(n: usize, speed: f64) -> Result<Self> {
        let mut raw = vec![speed; n * n];
        for i in 0..n {
            raw[i * n + i] = 0.0;
        }
        Self::symmetrize(n, &raw)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.speeds[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.speeds
    }

    /// Graph of every pair with a positive link speed.
    pub fn positive_edges(&self) -> AdjacencyMatrix {
        let mut adj = AdjacencyMatrix::empty(self.n);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) > 0.0 {
                    adj.insert(i, j);
                }
            }
        }
        adj
    }

    /// Positive off-diagonal entries of the upper triangle.
    pub fn positive_speeds(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let s = self.get(i, j);
                if s > 0.0 {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Overwrite one link (both directions). Used when live measurements arrive.
    pub fn update_link(&mut self, i: usize, j: usize, speed: f64) -> Result<()> {
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::validation(alloc::format!("invalid link ({i}, {j})")));
        }
        if !speed.is_finite() || speed < 0.0 {
            return Err(Error::validation(alloc::format!("invalid link speed {speed}")));
        }
        self.speeds[i * self.n + j] = speed;
        self.speeds[j * self.n + i] = speed;
        Ok(())
    }
}

/// Symmetric boolean adjacency without self-loops.
#[derive(Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    edges: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut adj = Self::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                adj.insert(i, j);
            }
        }
        adj
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::validation(alloc::format!("invalid edge ({i}, {j}) for n={n}")));
            }
            adj.insert(i, j);
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `{i, j}`. Self-loops are ignored.
    pub fn insert(&mut self, i: usize, j: usize) {
        if i != j {
            self.edges[i * self.n + j] = true;
            self.edges[j * self.n + i] = true;
        }
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| ((i + 1)..self.n).filter(move |&j| self.has_edge(i, j)).map(move |j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn is_empty(&self) -> bool {
        !self.edges.iter().any(|&e| e)
    }
}

impl fmt::Debug for AdjacencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdjacencyMatrix")
            .field("n", &self.n)
            .field("edges", &self.edges().collect::<Vec<_>>())
            .finish()
    }
}

/// Round at which each pair last exchanged models.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestampMatrix {
    n: usize,
    last_round: Vec<i64>,
}

impl TimestampMatrix {
    /// All entries start at `-t_thres`, so nothing counts as recently connected at round 0.
    pub fn new(n: usize, t_thres: i64) -> Self {
        Self {
            n,
            last_round: vec![-t_thres; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.last_round[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, round: i64) {
        self.last_round[i * self.n + j] = round;
        self.last_round[j * self.n + i] = round;
    }

    pub fn record(&mut self, matching: &Matching, round: i64) {
        for (i, j) in matching.pairs() {
            self.set(i, j, round);
        }
    }
}

/// Disjoint worker pairs plus the workers left alone this round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    partner: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(n: usize) -> Self {
        Self {
            partner: vec![None; n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(n);
        for &(i, j) in pairs {
            m.add_pair(i, j)?;
        }
        Ok(m)
    }

    /// Built from a mate array; the array must be an involution without fixed points.
    pub fn from_partners(partner: Vec<Option<usize>>) -> Result<Self> {
        let n = partner.len();
        for (i, p) in partner.iter().enumerate() {
            if let Some(j) = *p {
                if j >= n || j == i || partner[j] != Some(i) {
                    return Err(Error::validation(alloc::format!("inconsistent mate for worker {i}")));
                }
            }
        }
        Ok(Self { partner })
    }

    pub fn add_pair(&mut self, i: usize, j: usize) -> Result<()> {
        let n = self.partner.len();
        if i >= n || j >= n || i == j {
            return Err(Error::validation(alloc::format!("invalid pair ({i}, {j}) for n={n}")));
        }
        if self.partner[i].is_some() || self.partner[j].is_some() {
            return Err(Error::validation(alloc::format!("pair ({i}, {j}) overlaps an existing pair")));
        }
        self.partner[i] = Some(j);
        self.partner[j] = Some(i);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.partner.len()
    }

    pub fn peer_of(&self, worker: usize) -> Option<usize> {
        self.partner[worker]
    }

    pub fn is_matched(&self, worker: usize) -> bool {
        self.partner[worker].is_some()
    }

    /// Pairs `(i, j)` with `i < j`, ascending by `i`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.partner
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.filter(|&j| i < j).map(|j| (i, j)))
    }

    pub fn unmatched(&self) -> impl Iterator<Item = usize> + '_ {
        self.partner
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_none().then_some(i))
    }

    pub fn len(&self) -> usize {
        self.partner.iter().filter(|p| p.is_some()).count() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds every pair of `other`; the two matchings must be vertex-disjoint.
    pub fn union(&mut self, other: &Matching) -> Result<()> {
        for (i, j) in other.pairs() {
            self.add_pair(i, j)?;
        }
        Ok(())
    }
}

/// Which gossip-matrix property failed and where.
#[derive(Clone, Debug, PartialEq)]
pub enum InvariantViolation {
    RowSum { row: usize, sum: f64 },
    ColumnSum { column: usize, sum: f64 },
    Asymmetric { i: usize, j: usize },
    NotIdempotent { i: usize, j: usize, deviation: f64 },
    NonFinite { i: usize, j: usize },
}

impl InvariantViolation {
    pub fn name(&self) -> &'static str {
        match self {
            InvariantViolation::RowSum { .. } => "row-stochastic",
            InvariantViolation::ColumnSum { .. } => "column-stochastic",
            InvariantViolation::Asymmetric { .. } => "symmetric",
            InvariantViolation::NotIdempotent { .. } => "idempotent",
            InvariantViolation::NonFinite { .. } => "finite",
        }
    }
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvariantViolation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            InvariantViolation::ColumnSum { column, sum } => write!(f, "column {column} sums to {sum}"),
            InvariantViolation::Asymmetric { i, j } => write!(f, "W[{i}][{j}] != W[{j}][{i}]"),
            InvariantViolation::NotIdempotent { i, j, deviation } => {
                write!(f, "(W·W)[{i}][{j}] deviates from W by {deviation:e}")
            }
            InvariantViolation::NonFinite { i, j } => write!(f, "W[{i}][{j}] is not finite"),
        }
    }
}

/// Dense row-major mixing matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GossipMatrix {
    n: usize,
    weights: Vec<f64>,
}

impl GossipMatrix {
    /// ½/½ rows for matched pairs, an identity row for anyone left alone.
    pub fn from_matching(matching: &Matching) -> Self {
        let n = matching.n();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            match matching.peer_of(i) {
                Some(j) => {
                    weights[i * n + i] = 0.5;
                    weights[i * n + j] = 0.5;
                }
                None => weights[i * n + i] = 1.0,
            }
        }
        Self { n, weights }
    }

    /// Raw weights, unchecked. Call [`GossipMatrix::check`] before trusting them.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::validation("gossip matrix must be n×n"));
        }
        Ok(Self { n, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Doubly stochastic, symmetric and idempotent, each within `tol` absolute.
    pub fn check(&self, tol: f64) -> core::result::Result<(), InvariantViolation> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if !self.get(i, j).is_finite() {
                    return Err(InvariantViolation::NonFinite { i, j });
                }
            }
        }
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| self.get(i, j)).sum();
            if libm::fabs(sum - 1.0) > tol {
                return Err(InvariantViolation::RowSum { row: i, sum });
            }
        }
        for j in 0..n {
            let sum: f64 = (0..n).map(|i| self.get(i, j)).sum();
            if libm::fabs(sum - 1.0) > tol {
                return Err(InvariantViolation::ColumnSum { column: j, sum });
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if libm::fabs(self.get(i, j) - self.get(j, i)) > tol {
                    return Err(InvariantViolation::Asymmetric { i, j });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let ww: f64 = (0..n).map(|k| self.get(i, k) * self.get(k, j)).sum();
                let deviation = libm::fabs(ww - self.get(i, j));
                if deviation > tol {
                    return Err(InvariantViolation::NotIdempotent { i, j, deviation });
                }
            }
        }
        Ok(())
    }
}

/// Compression ratio `c`: each coordinate travels with probability `1/c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressionConfig {
    ratio: u32,
}

impl CompressionConfig {
    pub fn new(ratio: u32) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::validation("compression ratio c must be >= 1"));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    /// Inclusion probability `p = 1/c`.
    pub fn p(&self) -> f64 {
        1.0 / self.ratio as f64
    }

    /// `q = 1 - 1/c`.
    pub fn q(&self) -> f64 {
        1.0 - self.p()
    }
}

/// Theory-only constants; used by the convergence bound and nothing else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryConstants {
    pub sigma: f64,
    pub zeta: f64,
    pub lipschitz: f64,
    pub f0_minus_fstar: f64,
}

impl TheoryConstants {
    pub fn new(sigma: f64, zeta: f64, lipschitz: f64, f0_minus_fstar: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma", sigma),
            ("zeta", zeta),
            ("lipschitz", lipschitz),
            ("f0_minus_fstar", f0_minus_fstar),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(alloc::format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            sigma,
            zeta,
            lipschitz,
            f0_minus_fstar,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_takes_the_slower_direction() {
        let b = BandwidthMatrix::symmetrize(2, &[0.0, 3.0, 5.0, 0.0]).unwrap();
        assert_eq!(b.as_slice(), &[0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn symmetric_input_is_unchanged() {
        let raw = [0.0, 1.0, 2.0, 1.0, 0.0, 4.0, 2.0, 4.0, 0.0];
        let b = BandwidthMatrix::symmetrize(3, &raw).unwrap();
        assert_eq!(b.as_slice(), &raw);
    }

    #[test]
    fn symmetrize_zeroes_the_diagonal() {
        let b = BandwidthMatrix::symmetrize(2, &[9.0, 1.0, 1.0, 9.0]).unwrap();
        assert_eq!(b.get(0, 0), 0.0);
        assert_eq!(b.get(1, 1), 0.0);
    }

    #[test]
    fn symmetrize_rejects_nan_and_negatives() {
        assert!(matches!(
            BandwidthMatrix::symmetrize(2, &[0.0, f64::NAN, 1.0, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            BandwidthMatrix::symmetrize(2, &[0.0, -1.0, 1.0, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(BandwidthMatrix::symmetrize(2, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn timestamps_start_stale() {
        let r = TimestampMatrix::new(3, 10);
        assert_eq!(r.get(0, 1), -10);
    }

    #[test]
    fn matching_rejects_overlap() {
        let mut m = Matching::empty(4);
        m.add_pair(0, 1).unwrap();
        assert!(m.add_pair(1, 2).is_err());
        assert!(m.add_pair(2, 2).is_err());
        assert_eq!(m.pairs().collect::<Vec<_>>(), [(0, 1)]);
        assert_eq!(m.unmatched().collect::<Vec<_>>(), [2, 3]);
    }

    #[test]
    fn matching_from_partners_validates_involution() {
        assert!(Matching::from_partners(alloc::vec![Some(1), Some(0), None]).is_ok());
        assert!(Matching::from_partners(alloc::vec![Some(1), None]).is_err());
    }

    #[test]
    fn gossip_from_matching_is_valid() {
        let m = Matching::from_pairs(3, &[(0, 2)]).unwrap();
        let w = GossipMatrix::from_matching(&m);
        assert_eq!(w.get(1, 1), 1.0);
        assert_eq!(w.get(0, 2), 0.5);
        assert!(w.check(1e-12).is_ok());
    }

    #[test]
    fn check_names_the_broken_invariant() {
        let w = GossipMatrix::from_weights(2, alloc::vec![0.6, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(w.check(1e-12).unwrap_err().name(), "row-stochastic");
        // doubly stochastic and symmetric but not a projection
        let w = GossipMatrix::from_weights(2, alloc::vec![0.25, 0.75, 0.75, 0.25]).unwrap();
        assert_eq!(w.check(1e-12).unwrap_err().name(), "idempotent");
        let w = GossipMatrix::from_weights(2, alloc::vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(w.check(1e-12).is_ok());
    }

    #[test]
    fn compression_config() {
        assert!(CompressionConfig::new(0).is_err());
        let c = CompressionConfig::new(4).unwrap();
        assert_eq!(c.p(), 0.25);
        assert_eq!(c.p() + c.q(), 1.0);
    }

    #[test]
    fn theory_constants_reject_negatives() {
        assert!(TheoryConstants::new(1.0, 0.0, 1.0, 0.0).is_ok());
        assert!(TheoryConstants::new(-1.0, 0.0, 1.0, 0.0).is_err());
    }
}
