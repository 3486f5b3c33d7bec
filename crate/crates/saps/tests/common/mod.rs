//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's numerical kernels; only the round schedule (matchings and seeds)
//! is taken from a run's log.

#![allow(dead_code)]

use saps::config::{BandwidthSource, ObjectiveSpec, PartitionSpec, PeerSelectionSpec, TransportSpec};
use saps::ExperimentConfig;

/// Reference SplitMix64, written from the published constants.
pub struct RefRng(u64);

impl RefRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize
    }
}

/// Coordinate j is kept iff the j-th draw is below 2⁶⁴/c (compared in u128).
pub fn ref_mask(seed: u64, c: u32, dim: usize) -> Vec<bool> {
    let threshold = (1u128 << 64) / c as u128;
    let mut rng = RefRng::new(seed);
    (0..dim).map(|_| (rng.next() as u128) < threshold).collect()
}

pub type Rows = Vec<Vec<f64>>;

/// Dense `n×n` mixing matrix of a pairing: ½ on both ends of a pair, 1 on the
/// diagonal of anyone unpaired.
pub fn pair_matrix(n: usize, pairs: &[(usize, usize)]) -> Rows {
    let mut w = vec![vec![0.0; n]; n];
    let mut paired = vec![false; n];
    for &(i, j) in pairs {
        w[i][i] = 0.5;
        w[j][j] = 0.5;
        w[i][j] = 0.5;
        w[j][i] = 0.5;
        paired[i] = true;
        paired[j] = true;
    }
    for i in 0..n {
        if !paired[i] {
            w[i][i] = 1.0;
        }
    }
    w
}

pub fn matmul(a: &Rows, b: &Rows) -> Rows {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; c]; r];
    for i in 0..r {
        for l in 0..k {
            for j in 0..c {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// `X_{t+1} = Y∘¬M + (Y∘M)W` with models stored as rows, so the mixed part
/// is `W·(Y∘M)` (W is symmetric).
pub fn masked_mix(y: &Rows, mask: &[bool], w: &Rows) -> Rows {
    let n = y.len();
    let dim = y[0].len();
    let masked: Rows = y
        .iter()
        .map(|r| r.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect())
        .collect();
    let mixed = matmul(w, &masked);
    (0..n)
        .map(|i| (0..dim).map(|j| if mask[j] { mixed[i][j] } else { y[i][j] }).collect())
        .collect()
}

/// Reference recursion for quadratic workers `½‖x − b_i‖²` under a given
/// schedule of `(seed, pairs)` rounds.
pub fn quadratic_reference(
    x0: &Rows,
    targets: &Rows,
    gamma: f64,
    c: u32,
    schedule: &[(u64, Vec<(usize, usize)>)],
) -> Rows {
    let n = x0.len();
    let dim = x0[0].len();
    let mut x = x0.clone();
    for (seed, pairs) in schedule {
        let y: Rows = (0..n)
            .map(|i| (0..dim).map(|j| x[i][j] - gamma * (x[i][j] - targets[i][j])).collect())
            .collect();
        x = masked_mix(&y, &ref_mask(*seed, c, dim), &pair_matrix(n, pairs));
    }
    x
}

pub fn column_mean(rows: &Rows) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// `Σᵢ ‖xᵢ − x̄‖²`.
pub fn spread(rows: &Rows) -> f64 {
    let mean = column_mean(rows);
    rows.iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(a: &Rows) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = cs * mkp - sn * mkq;
                    m[k][q] = sn * mkp + cs * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = cs * mpk - sn * mqk;
                    m[q][k] = sn * mpk + cs * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Maximum matching size by dynamic programming over vertex subsets.
pub fn max_matching_size_dp(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![0u32; n];
    for &(i, j) in edges {
        adj[i] |= 1 << j;
        adj[j] |= 1 << i;
    }
    let full = (1usize << n) - 1;
    let mut best = vec![0u8; 1 << n];
    for s in 1..=full {
        let i = s.trailing_zeros() as usize;
        let rest = s & !(1 << i);
        let mut b = best[rest];
        let mut nb = adj[i] as usize & rest;
        while nb != 0 {
            let j = nb.trailing_zeros() as usize;
            b = b.max(1 + best[rest & !(1 << j)]);
            nb &= nb - 1;
        }
        best[s] = b;
    }
    best[full] as usize
}

pub fn uniform_bandwidth() -> BandwidthSource {
    BandwidthSource::Uniform { lo: 0.0, hi: 5e6 }
}

pub fn quadratic_config(n: usize, dim: usize, rounds: u64, c: u32, gamma: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n,
        dim,
        rounds,
        c,
        gamma,
        t_thres: 10,
        b_thres: None,
        master_seed: seed,
        objective: ObjectiveSpec::Quadratic,
        partition: PartitionSpec::Iid,
        transport: TransportSpec::default(),
        peer_selection: PeerSelectionSpec::Adaptive,
        bandwidth: uniform_bandwidth(),
    }
}

pub fn logistic_config(n: usize, dim: usize, rounds: u64, c: u32, gamma: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        objective: ObjectiveSpec::Logistic {
            samples: None,
            batch_size: 16,
            dataset: None,
        },
        ..quadratic_config(n, dim, rounds, c, gamma, seed)
    }
}
