//! Verification suite: structural invariants, oracles, and the theory checks,
//! each reported as a named pass/fail line.

use std::fmt;
use std::time::{Duration, Instant};

use saps_core::analysis::{commutation_gap, estimate_rho, mean_gram, measure_contraction, second_eigenvalue};
use saps_core::coordinator::{comm_cost, get_new_connected_graph, median_positive_bandwidth, CostAlgorithm, CostModelInput};
use saps_core::matching::{max_matching, GossipGenerator, PeerSelection};
use saps_core::sparsify::{generate_mask, SparsePayload};
use saps_core::wire::{self, Message};
use saps_core::{
    AdjacencyMatrix, BandwidthMatrix, CompressionConfig, GossipMatrix, Matching, ProtocolError, SplitMix64,
};

use crate::bandwidth::uniform_matrix;

/// Link speeds for synthetic topologies: Uniform(0, 5] MB/s.
pub const UNIFORM_HI: f64 = 5e6;
const SEED: u64 = 0x5A95_0001;

#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteOptions {
    /// Smaller sample counts; same checks.
    pub quick: bool,
    /// Negative control: feed a matrix whose rows do not sum to 1 into the invariant check.
    pub inject_bad_matrix: bool,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<26} {:>8.2}s  {}", c.name, c.elapsed.as_secs_f64(), c.detail)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

type CheckFn = fn(&SuiteOptions) -> Result<String, String>;

pub fn run_verification_suite(opts: &SuiteOptions) -> SuiteReport {
    let checks: [(&'static str, CheckFn); 9] = [
        ("gossip-matrix-invariants", check_matrix_invariants),
        ("matching-oracle", check_matching_oracle),
        ("mask-gossip-commutation", check_commutation),
        ("mask-statistics", check_mask_statistics),
        ("pair-contraction", check_pair_contraction),
        ("contraction-bound", check_contraction_bound),
        ("spectral-estimate", check_spectral),
        ("cost-model", check_cost_model),
        ("wire-codec", check_codec),
    ];
    let mut report = SuiteReport::default();
    for (name, check) in checks {
        let started = Instant::now();
        let result = check(opts);
        report.checks.push(CheckOutcome {
            name,
            passed: result.is_ok(),
            detail: result.unwrap_or_else(|e| e),
            elapsed: started.elapsed(),
        });
    }
    report
}

fn generator(n: usize, mode: PeerSelection, rng: &mut SplitMix64) -> Result<GossipGenerator, String> {
    let b = uniform_matrix(n, 0.0, UNIFORM_HI, rng).map_err(|e| e.to_string())?;
    let thres = median_positive_bandwidth(&b).ok_or("no positive link")?;
    let b_star = get_new_connected_graph(&b, thres);
    GossipGenerator::new(mode, b, b_star, 10, rng.fork()).map_err(|e| e.to_string())
}

fn check_matrix_invariants(opts: &SuiteOptions) -> Result<String, String> {
    let total = if opts.quick { 1_200 } else { 10_008 };
    let sizes = [2usize, 3, 4, 8, 16, 32];
    let modes = [PeerSelection::Adaptive, PeerSelection::Random, PeerSelection::Ring];
    let per = total / (sizes.len() * modes.len());
    let mut rng = SplitMix64::new(SEED);
    let mut checked = 0;
    let mut matrices: Vec<(String, GossipMatrix)> = Vec::new();
    if opts.inject_bad_matrix {
        let bad = GossipMatrix::from_weights(2, vec![0.5, 0.6, 0.5, 0.4]).map_err(|e| e.to_string())?;
        matrices.push(("injected".into(), bad));
    }
    for &n in &sizes {
        for &mode in &modes {
            let mut g = generator(n, mode, &mut rng)?;
            for _ in 0..per {
                let (w, _) = g.step().map_err(|e| e.to_string())?;
                matrices.push((format!("n={n} {mode:?} round {}", g.round() - 1), w));
            }
        }
    }
    for (label, w) in &matrices {
        if let Err(v) = w.check(1e-12) {
            return Err(format!("{} violated ({label}): {v}", v.name()));
        }
        checked += 1;
    }
    Ok(format!("{checked} matrices doubly stochastic, symmetric, idempotent within 1e-12"))
}

/// Exhaustive maximum matching size.
pub fn brute_force_matching_size(g: &AdjacencyMatrix) -> usize {
    fn go(g: &AdjacencyMatrix, used: &mut [bool], from: usize) -> usize {
        let n = g.n();
        let Some(i) = (from..n).find(|&i| !used[i]) else {
            return 0;
        };
        used[i] = true;
        let mut best = go(g, used, i + 1);
        for j in i + 1..n {
            if !used[j] && g.has_edge(i, j) {
                used[j] = true;
                best = best.max(1 + go(g, used, i + 1));
                used[j] = false;
            }
        }
        used[i] = false;
        best
    }
    go(g, &mut vec![false; g.n()], 0)
}

pub fn random_graph(n: usize, p: f64, rng: &mut SplitMix64) -> AdjacencyMatrix {
    let mut g = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                g.insert(i, j);
            }
        }
    }
    g
}

fn check_matching_oracle(opts: &SuiteOptions) -> Result<String, String> {
    let graphs = if opts.quick { 60 } else { 201 };
    let mut rng = SplitMix64::new(SEED + 1);
    for k in 0..graphs {
        let p = [0.2, 0.5, 0.8][k % 3];
        let n = 1 + rng.index(10);
        let g = random_graph(n, p, &mut rng);
        let m = max_matching(&g);
        if let Some((i, j)) = m.pairs().find(|&(i, j)| !g.has_edge(i, j)) {
            return Err(format!("graph {k}: matched non-edge ({i}, {j})"));
        }
        let want = brute_force_matching_size(&g);
        if m.len() != want {
            return Err(format!("graph {k} (n={n}, p={p}): blossom found {} pairs, maximum is {want}", m.len()));
        }
    }
    Ok(format!("{graphs} random graphs match exhaustive search"))
}

fn check_commutation(opts: &SuiteOptions) -> Result<String, String> {
    let instances = if opts.quick { 200 } else { 1_000 };
    let mut rng = SplitMix64::new(SEED + 2);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let n = [2usize, 4, 8][k % 3];
        let dim = [1usize, 3, 17][(k / 3) % 3];
        let c = 1 + rng.below(4) as u32;
        let a: Vec<f64> = (0..dim * n).map(|_| rng.standard_normal()).collect();
        let mask = generate_mask(rng.next_u64(), c, dim).map_err(|e| e.to_string())?;
        let mut g = generator(n, PeerSelection::Random, &mut rng)?;
        let (w, _) = g.step().map_err(|e| e.to_string())?;
        let gap = commutation_gap(&a, n, &mask, &w);
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("instance {k} (n={n}, N={dim}): gap {gap:e}"));
        }
    }
    Ok(format!("{instances} instances, worst gap {worst:e}"))
}

fn check_mask_statistics(_: &SuiteOptions) -> Result<String, String> {
    let all = generate_mask(42, 1, 5).map_err(|e| e.to_string())?;
    if all.count() != 5 {
        return Err("c=1 mask drops indices".into());
    }
    let big = generate_mask(42, 100, 1_000_000).map_err(|e| e.to_string())?;
    let again = generate_mask(42, 100, 1_000_000).map_err(|e| e.to_string())?;
    if big != again {
        return Err("equal seeds gave different masks".into());
    }
    if !(9_000..=11_000).contains(&big.count()) {
        return Err(format!("c=100, N=1e6 kept {} indices", big.count()));
    }
    Ok(format!("c=100, N=1e6 keeps {}", big.count()))
}

fn check_pair_contraction(opts: &SuiteOptions) -> Result<String, String> {
    let trials = if opts.quick { 2_000 } else { 10_000 };
    let mut rng = SplitMix64::new(SEED + 3);
    let mut g = generator(2, PeerSelection::Adaptive, &mut rng)?;
    let full = measure_contraction(&mut g, 1, 4, 1, 100, &mut rng).map_err(|e| e.to_string())?;
    if full.ratios[1] != 0.0 {
        return Err(format!("c=1, n=2: e1/e0 = {:e}, expected 0", full.ratios[1]));
    }
    let half = measure_contraction(&mut g, 2, 1, 1, trials, &mut rng).map_err(|e| e.to_string())?;
    let r = half.ratios[1];
    if !(0.45..=0.55).contains(&r) {
        return Err(format!("c=2, n=2: per-round ratio {r}, expected within [0.45, 0.55]"));
    }
    Ok(format!("c=1 reaches consensus in one round; c=2 ratio {r:.4}"))
}

/// Contraction measured against `(q + pρ̂²)ᵗ` with slack 1.1.
#[derive(Clone, Debug)]
pub struct ContractionRow {
    pub n: usize,
    pub c: u32,
    pub rho: f64,
    pub factor: f64,
    pub worst_ratio: f64,
    pub worst_round: usize,
    /// `(measured − 1.1·bound) / std_error` at the worst round.
    pub z_score: f64,
}

impl ContractionRow {
    pub fn holds(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

/// The grid measurement behind the contraction check: adaptive selection on
/// Uniform(0, 5] MB/s links, `T_thres = 10`, median `B_thres`.
pub fn contraction_grid(
    ns: &[usize],
    cs: &[u32],
    trials: usize,
    t_max: usize,
    rho_samples: usize,
    dim: usize,
    seed: u64,
) -> Result<Vec<ContractionRow>, String> {
    let mut rows = Vec::new();
    for &n in ns {
        for &c in cs {
            let mut rng = SplitMix64::new(seed ^ ((n as u64) << 32) ^ c as u64);
            let b = uniform_matrix(n, 0.0, UNIFORM_HI, &mut rng).map_err(|e| e.to_string())?;
            let b_star = get_new_connected_graph(&b, median_positive_bandwidth(&b).ok_or("no positive link")?);
            let mut g = GossipGenerator::new(PeerSelection::Adaptive, b, b_star, 10, rng.fork()).map_err(|e| e.to_string())?;
            let mut probe = g.clone();
            let rho = estimate_rho(&mut probe, rho_samples).map_err(|e| e.to_string())?.rho;
            let cc = CompressionConfig::new(c).map_err(|e| e.to_string())?;
            let factor = cc.q() + cc.p() * rho * rho;
            let curve = measure_contraction(&mut g, c, dim, t_max, trials, &mut rng).map_err(|e| e.to_string())?;
            let mut worst = (0.0, 0, 0.0);
            for t in 1..=t_max {
                let bound = 1.1 * factor.powi(t as i32);
                let r = if bound > 0.0 {
                    curve.ratios[t] / bound
                } else if curve.ratios[t] > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if r > worst.0 {
                    let z = (curve.ratios[t] - bound) / curve.std_errors[t];
                    worst = (r, t, z);
                }
            }
            rows.push(ContractionRow {
                n,
                c,
                rho,
                factor,
                worst_ratio: worst.0,
                worst_round: worst.1,
                z_score: worst.2,
            });
        }
    }
    Ok(rows)
}

fn check_contraction_bound(opts: &SuiteOptions) -> Result<String, String> {
    let (trials, rho_samples) = if opts.quick { (100, 200) } else { (500, 1_000) };
    let rows = contraction_grid(&[2, 4, 8, 16], &[1, 2, 10, 100], trials, 100, rho_samples, 32, SEED + 4)?;
    let broken: Vec<String> = rows
        .iter()
        .filter(|r| !r.holds())
        .map(|r| format!("n={} c={} at t={} ({:.2}x bound)", r.n, r.c, r.worst_round, r.worst_ratio))
        .collect();
    if broken.is_empty() {
        Ok(format!("{} configurations within 1.1·(q+pρ²)^t", rows.len()))
    } else {
        Err(format!("{} of {} configurations exceed 1.1·(q+pρ²)^t: {}", broken.len(), rows.len(), broken.join("; ")))
    }
}

fn check_spectral(opts: &SuiteOptions) -> Result<String, String> {
    let samples = if opts.quick { 200 } else { 1_000 };
    let err = |e: saps_core::Error| e.to_string();

    let exact = |ws: &[GossipMatrix]| -> Result<f64, String> {
        let n = ws[0].n();
        second_eigenvalue(&mean_gram(ws).map_err(err)?, n).map_err(err)
    };
    let pair = Matching::from_pairs(2, &[(0, 1)]).map_err(err)?;
    let r2 = exact(&[GossipMatrix::from_matching(&pair)])?;
    if r2.abs() > 1e-9 {
        return Err(format!("n=2 pair averaging: rho {r2}, expected 0"));
    }
    let a = GossipMatrix::from_matching(&Matching::from_pairs(4, &[(0, 1), (2, 3)]).map_err(err)?);
    let b = GossipMatrix::from_matching(&Matching::from_pairs(4, &[(1, 2), (3, 0)]).map_err(err)?);
    let ring = exact(&[a, b])?;
    if (ring - 0.5).abs() > 1e-9 {
        return Err(format!("4-ring alternating matchings: rho {ring}, expected 0.5"));
    }

    let mut rng = SplitMix64::new(SEED + 5);
    let connected = generator(8, PeerSelection::Adaptive, &mut rng)?;
    let rc = estimate_rho(&mut connected.clone(), samples).map_err(err)?.rho;
    if rc >= 1.0 - 1e-3 {
        return Err(format!("connected links: rho {rc} not below 1 - 1e-3"));
    }
    let split = bipartitioned(8, &mut rng)?;
    let mut g = GossipGenerator::new(PeerSelection::Adaptive, split.clone(), split.positive_edges(), 10, rng.fork())
        .map_err(err)?;
    let rs = estimate_rho(&mut g, samples).map_err(err)?.rho;
    if (rs - 1.0).abs() > 1e-9 {
        return Err(format!("bipartitioned links: rho {rs}, expected 1"));
    }
    Ok(format!("pair 0, ring 0.5, connected {rc:.4}, bipartitioned {rs}"))
}

/// Uniform links inside two halves, none across.
pub fn bipartitioned(n: usize, rng: &mut SplitMix64) -> Result<BandwidthMatrix, String> {
    let full = uniform_matrix(n, 0.0, UNIFORM_HI, rng).map_err(|e| e.to_string())?;
    let half = n / 2;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if (i < half) == (j < half) { full.get(i, j) } else { 0.0 })
                .collect()
        })
        .collect();
    BandwidthMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

fn check_cost_model(_: &SuiteOptions) -> Result<String, String> {
    let input = |algorithm, n_params, n_workers, rounds, ratio, n_peers| CostModelInput {
        algorithm,
        n_params,
        n_workers,
        rounds,
        ratio,
        n_peers,
    };
    let spots = [
        (input(CostAlgorithm::Saps, 100, 8, 10, 10, None), (100.0, 200.0)),
        (input(CostAlgorithm::PsPsgd, 100, 8, 10, 10, None), (16_000.0, 2_000.0)),
        (input(CostAlgorithm::DPsgd, 100, 8, 10, 10, Some(2)), (100.0, 8_000.0)),
    ];
    for (inp, want) in spots {
        let got = comm_cost(&inp).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("{}: got {got:?}, expected {want:?}", inp.algorithm));
        }
    }
    // Every row against its closed form at an asymmetric point.
    let (nn, n, t, c, np) = (1_000.0, 7.0, 13.0, 20.0, 3.0);
    for alg in CostAlgorithm::ALL {
        let want = match alg {
            CostAlgorithm::PsPsgd | CostAlgorithm::FedAvg => (2.0 * nn * n * t, 2.0 * nn * t),
            CostAlgorithm::AllReduce => (0.0, 2.0 * nn * t),
            CostAlgorithm::TopK => (0.0, 2.0 * n * (nn / c) * t),
            CostAlgorithm::SFedAvg => ((nn + 2.0 * nn / c) * n * t, (nn + 2.0 * nn / c) * t),
            CostAlgorithm::DPsgd => (nn, 4.0 * np * nn * t),
            CostAlgorithm::DcdPsgd => (nn, 4.0 * np * (nn / c) * t),
            CostAlgorithm::Saps => (nn, 2.0 * (nn / c) * t),
        };
        let got = comm_cost(&input(alg, 1_000, 7, 13, 20, Some(3))).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("{alg}: got {got:?}, expected {want:?}"));
        }
    }
    if comm_cost(&input(CostAlgorithm::DcdPsgd, 100, 8, 10, 10, None)).is_ok() {
        return Err("missing n_p accepted for dcd-psgd".into());
    }
    Ok("3 spot values and all 8 rows exact".into())
}

fn check_codec(_: &SuiteOptions) -> Result<String, String> {
    let mut rng = SplitMix64::new(SEED + 6);
    let payload = SparsePayload {
        round: rng.next_u64(),
        sender: 7,
        values: (0..1_000).map(|_| rng.standard_normal()).collect(),
    };
    let bytes = wire::encode_payload(&payload);
    if bytes.len() != wire::MODEL_VALUES_OVERHEAD + 8 * 1_000 {
        return Err(format!("encoded size {}", bytes.len()));
    }
    let back = wire::decode_payload(&bytes).map_err(|e| e.to_string())?;
    if back != payload || back.values.iter().zip(&payload.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("round trip changed the payload".into());
    }
    let mut flipped = bytes.clone();
    flipped[wire::HEADER_LEN + 20] ^= 0x10;
    match wire::decode(&flipped) {
        Err(ProtocolError::CrcMismatch { .. }) => {}
        other => return Err(format!("flipped byte gave {other:?}")),
    }
    match wire::decode(&bytes[..wire::HEADER_LEN]) {
        Err(ProtocolError::Truncated { .. }) => {}
        other => return Err(format!("truncated frame gave {other:?}")),
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    if !matches!(wire::decode(&magic), Err(ProtocolError::BadMagic(_))) {
        return Err("bad magic accepted".into());
    }
    let mut version = bytes;
    version[4] = 9;
    if !matches!(wire::decode(&version), Err(ProtocolError::BadVersion(9))) {
        return Err("bad version accepted".into());
    }
    if wire::decode(&wire::encode(&Message::Shutdown)) != Ok(Message::Shutdown) {
        return Err("control frame round trip failed".into());
    }
    Ok("round trip, CRC, truncation, magic and version errors distinct".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_small_cases() {
        let path = AdjacencyMatrix::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(brute_force_matching_size(&path), 1);
        let c5 = AdjacencyMatrix::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        assert_eq!(brute_force_matching_size(&c5), 2);
        assert_eq!(brute_force_matching_size(&AdjacencyMatrix::complete(6)), 3);
    }

    #[test]
    fn bipartition_has_no_cross_links() {
        let b = bipartitioned(6, &mut SplitMix64::new(1)).unwrap();
        assert_eq!(b.get(0, 5), 0.0);
        assert!(b.get(0, 1) > 0.0);
    }
}
