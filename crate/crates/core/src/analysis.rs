//! Spectral estimate of the expected mixing matrix, consensus contraction,
//! the convergence-bound constants, and per-round metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matching::GossipGenerator;
use crate::rng::SplitMix64;
use crate::sparsify::{generate_mask, MaskStream};
use crate::types::{BandwidthMatrix, CompressionConfig, GossipMatrix, Matching, ParameterVector, TheoryConstants};

/// Neumaier's compensated sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if libm::fabs(self.sum) >= libm::fabs(v) {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::new();
    values.into_iter().for_each(|v| s.add(v));
    s.value()
}

/// Across-worker mean model.
pub fn mean_model(models: &[ParameterVector]) -> Vec<f64> {
    let n = models.len();
    let dim = models.first().map_or(0, |m| m.len());
    (0..dim)
        .map(|j| neumaier_sum(models.iter().map(|m| m[j])) / n as f64)
        .collect()
}

/// `Σᵢ ‖xᵢ − x̄‖²`.
pub fn consensus_error(models: &[ParameterVector]) -> f64 {
    let mean = mean_model(models);
    neumaier_sum(
        models
            .iter()
            .flat_map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b))),
    )
}

fn consensus_error_rows(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut acc = CompensatedSum::new();
    for j in 0..dim {
        let mean = neumaier_sum(rows.iter().map(|r| r[j])) / n;
        for r in rows {
            let d = r[j] - mean;
            acc.add(d * d);
        }
    }
    acc.value()
}

/// Row-major `WᵀW`.
pub fn gram(w: &GossipMatrix) -> Vec<f64> {
    let n = w.n();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| w.get(k, i) * w.get(k, j)).sum();
        }
    }
    out
}

/// Mean of `WᵀW` over the samples.
pub fn mean_gram(samples: &[GossipMatrix]) -> Result<Vec<f64>> {
    let n = samples.first().ok_or_else(|| Error::validation("no samples"))?.n();
    let mut acc = vec![CompensatedSum::new(); n * n];
    for w in samples {
        if w.n() != n {
            return Err(Error::validation("samples disagree on n"));
        }
        for (a, v) in acc.iter_mut().zip(gram(w)) {
            a.add(v);
        }
    }
    let k = samples.len() as f64;
    Ok(acc.iter().map(|a| a.value() / k).collect())
}

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 100_000;

fn project_out_ones(v: &mut [f64]) {
    let mean = neumaier_sum(v.iter().copied()) / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Second-largest eigenvalue of a symmetric PSD matrix whose top eigenvector
/// is `𝟙/√n` with eigenvalue 1. Power iteration on `A − 𝟙𝟙ᵀ/n`, keeping the
/// iterate orthogonal to `𝟙`.
pub fn second_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    if a.len() != n * n {
        return Err(Error::validation("matrix must be n×n"));
    }
    if n < 2 {
        return Err(Error::validation("need n >= 2"));
    }
    let deflated: Vec<f64> = a.iter().map(|v| v - 1.0 / n as f64).collect();
    // fixed, asymmetric start vector so no eigenvector is missed by symmetry
    let mut rng = SplitMix64::new(0x5EED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
    project_out_ones(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut av = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERATIONS {
        for i in 0..n {
            av[i] = (0..n).map(|j| deflated[i * n + j] * v[j]).sum();
        }
        project_out_ones(&mut av);
        let lambda: f64 = av.iter().zip(&v).map(|(x, y)| x * y).sum();
        residual = libm::sqrt(av.iter().zip(&v).map(|(x, y)| (x - lambda * y) * (x - lambda * y)).sum());
        let nav = norm(&av);
        if nav < POWER_TOLERANCE {
            return Ok(0.0);
        }
        if residual < POWER_TOLERANCE {
            return Ok(lambda);
        }
        for (x, y) in v.iter_mut().zip(&av) {
            *x = y / nav;
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITERATIONS,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub rho: f64,
    pub n_samples: usize,
    /// Batch-means standard error over [`RHO_BATCHES`] equal batches.
    pub std_error: f64,
}

pub const RHO_BATCHES: usize = 10;
pub const MIN_RHO_SAMPLES: usize = 100;

/// Second eigenvalue of the sample mean of `WᵀW`.
pub fn rho_from_samples(samples: &[GossipMatrix]) -> Result<SpectralEstimate> {
    if samples.len() < MIN_RHO_SAMPLES {
        return Err(Error::validation(format!(
            "need at least {MIN_RHO_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].n();
    let rho = second_eigenvalue(&mean_gram(samples)?, n)?;
    let per = samples.len() / RHO_BATCHES;
    let mut batch = Vec::with_capacity(RHO_BATCHES);
    for b in 0..RHO_BATCHES {
        batch.push(second_eigenvalue(&mean_gram(&samples[b * per..(b + 1) * per])?, n)?);
    }
    let mean = batch.iter().sum::<f64>() / RHO_BATCHES as f64;
    let var = batch.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (RHO_BATCHES - 1) as f64;
    Ok(SpectralEstimate {
        rho: rho.clamp(0.0, 1.0),
        n_samples: samples.len(),
        std_error: libm::sqrt(var / RHO_BATCHES as f64),
    })
}

/// Runs the generator for `10·T_thres` warm-up rounds, then samples
/// `n_samples` mixing matrices from it.
pub fn estimate_rho(generator: &mut GossipGenerator, n_samples: usize) -> Result<SpectralEstimate> {
    if n_samples < MIN_RHO_SAMPLES {
        return Err(Error::validation(format!(
            "need at least {MIN_RHO_SAMPLES} samples, got {n_samples}"
        )));
    }
    warm_up(generator)?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        samples.push(generator.step()?.0);
    }
    rho_from_samples(&samples)
}

fn warm_up(generator: &mut GossipGenerator) -> Result<()> {
    for _ in 0..10 * generator.t_thres() {
        generator.step()?;
    }
    Ok(())
}

/// Averages every matched pair over the masked coordinates, in place.
pub fn masked_gossip_step(rows: &mut [Vec<f64>], mask: &MaskStream, matching: &Matching) {
    for (i, j) in matching.pairs() {
        for k in mask.indices() {
            let avg = (rows[i][k] + rows[j][k]) / 2.0;
            rows[i][k] = avg;
            rows[j][k] = avg;
        }
    }
}

/// Mean consensus-error ratios `e_t / e_0` for `t = 0..=t_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionCurve {
    pub ratio: u32,
    pub ratios: Vec<f64>,
    /// Standard error of each mean ratio.
    pub std_errors: Vec<f64>,
    pub n_trials: usize,
}

/// Worst violation of `ratio_t ≤ slack · bound_t` over `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundViolation {
    pub round: usize,
    pub measured: f64,
    pub bound: f64,
}

impl ContractionCurve {
    /// Checks `ratio_t ≤ slack · factorᵗ` for every recorded `t`.
    pub fn check_geometric(&self, factor: f64, slack: f64) -> core::result::Result<(), BoundViolation> {
        let mut worst: Option<BoundViolation> = None;
        for (t, &r) in self.ratios.iter().enumerate() {
            let bound = slack * libm::pow(factor, t as f64);
            if r > bound {
                let v = BoundViolation {
                    round: t,
                    measured: r,
                    bound,
                };
                if worst.map_or(true, |w| r / bound > w.measured / w.bound) {
                    worst = Some(v);
                }
            }
        }
        worst.map_or(Ok(()), Err)
    }

    /// Geometric mean per-round factor between `from` and `to`.
    pub fn per_round_factor(&self, from: usize, to: usize) -> f64 {
        libm::pow(self.ratios[to] / self.ratios[from], 1.0 / (to - from) as f64)
    }
}

/// Sparsified gossip without gradients from random starting models.
/// `rows` of width `dim` are drawn per trial; masks use fresh seeds from `rng`.
pub fn measure_contraction(
    generator: &mut GossipGenerator,
    ratio: u32,
    dim: usize,
    t_max: usize,
    n_trials: usize,
    rng: &mut SplitMix64,
) -> Result<ContractionCurve> {
    CompressionConfig::new(ratio)?;
    if n_trials == 0 || dim == 0 {
        return Err(Error::validation("need at least one trial and one coordinate"));
    }
    warm_up(generator)?;
    let n = generator.n();
    let mut sums = vec![CompensatedSum::new(); t_max + 1];
    let mut squares = vec![CompensatedSum::new(); t_max + 1];
    for _ in 0..n_trials {
        let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.standard_normal()).collect()).collect();
        let e0 = consensus_error_rows(&rows);
        sums[0].add(1.0);
        squares[0].add(1.0);
        for t in 1..=t_max {
            let (_, matching) = generator.step()?;
            let mask = generate_mask(rng.next_u64(), ratio, dim)?;
            masked_gossip_step(&mut rows, &mask, &matching);
            let r = consensus_error_rows(&rows) / e0;
            sums[t].add(r);
            squares[t].add(r * r);
        }
    }
    let k = n_trials as f64;
    let ratios: Vec<f64> = sums.iter().map(|s| s.value() / k).collect();
    let std_errors = if n_trials < 2 {
        vec![f64::NAN; t_max + 1]
    } else {
        ratios
            .iter()
            .zip(&squares)
            .map(|(m, sq)| libm::sqrt(((sq.value() / k - m * m).max(0.0)) * k / (k - 1.0) / k))
            .collect()
    };
    Ok(ContractionCurve {
        ratio,
        ratios,
        std_errors,
        n_trials,
    })
}

/// `(D₁, D₂) = (2/(1 − √(q + pρ))², 2/(1 − (q + pρ²)))`.
pub fn d_constants(p: f64, rho: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!(
            "p must lie in (0, 1], got {p}; p = 0 means nothing is ever exchanged"
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "rho must lie in [0, 1), got {rho}; rho = 1 means the workers never mix"
        )));
    }
    let q = 1.0 - p;
    let a = 1.0 - libm::sqrt(q + p * rho);
    let b = 1.0 - (q + p * rho * rho);
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::Domain(format!("degenerate mixing: p={p}, rho={rho}")));
    }
    Ok((2.0 / (a * a), 2.0 / b))
}

/// The four terms of the averaged-gradient-norm bound and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientBound {
    pub terms: [f64; 4],
    pub total: f64,
}

/// Upper bound on `(1/T) Σ E‖∇f(x̄_t)‖²` for constant step size.
/// `x0_consensus` is `‖X₀ − X̄₀𝟙ᵀ‖²_F`.
pub fn theorem_bound(
    k: &TheoryConstants,
    n: usize,
    rounds: u64,
    d1: f64,
    d2: f64,
    x0_consensus: f64,
) -> Result<GradientBound> {
    if k.sigma <= 0.0 {
        return Err(Error::Domain(
            "sigma must be positive: the step size behind the bound divides by sigma".into(),
        ));
    }
    if n == 0 || rounds == 0 {
        return Err(Error::Domain("n and T must be positive".into()));
    }
    let (s, z, l, gap) = (k.sigma, k.zeta, k.lipschitz, k.f0_minus_fstar);
    let nf = n as f64;
    let t = rounds as f64;
    let sqrt3 = libm::sqrt(3.0);
    let terms = [
        (6.0 * s * gap + 3.0 * s) / (2.0 * libm::sqrt(nf * t)),
        (6.0 * sqrt3 * l * gap + 2.0 * l * l * d1 * nf) / t,
        3.0 * l * l * d1 * nf * z * z / (s * s * t),
        2.0 * l * l * d2 * x0_consensus / (nf * t),
    ];
    Ok(GradientBound {
        terms,
        total: terms.iter().sum(),
    })
}

/// `(min, mean)` link speed over a matching's pairs; `None` without pairs.
pub fn matched_bandwidth(matching: &Matching, b: &BandwidthMatrix) -> Option<(f64, f64)> {
    let speeds: Vec<f64> = matching.pairs().map(|(i, j)| b.get(i, j)).collect();
    if speeds.is_empty() {
        return None;
    }
    let min = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    Some((min, neumaier_sum(speeds.iter().copied()) / speeds.len() as f64))
}

/// Per-round metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub pairs: usize,
    /// Mean over workers of frame bytes sent plus received.
    pub bytes_per_worker: f64,
    /// Bottleneck link speed over matched pairs (0 when nobody was matched).
    pub min_bw: f64,
    pub mean_bw: f64,
    /// `Σᵢ ‖xᵢ − x̄‖²` after the round; NaN when not observable.
    pub consensus_err: f64,
    pub mean_loss: f64,
    /// Cumulative communication time in seconds.
    pub cum_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandwidthSummary {
    /// Run mean of the per-round bottleneck.
    pub mean_min: f64,
    /// Run mean of the per-round mean matched speed.
    pub mean_mean: f64,
    pub rounds: usize,
}

/// Run averages over the rounds that matched at least one pair.
pub fn bandwidth_stats(records: &[RoundRecord]) -> Result<BandwidthSummary> {
    let used: Vec<&RoundRecord> = records.iter().filter(|r| r.pairs > 0).collect();
    if used.is_empty() {
        return Err(Error::validation("no round matched any pair"));
    }
    let k = used.len() as f64;
    Ok(BandwidthSummary {
        mean_min: neumaier_sum(used.iter().map(|r| r.min_bw)) / k,
        mean_mean: neumaier_sum(used.iter().map(|r| r.mean_bw)) / k,
        rounds: used.len(),
    })
}

/// Largest entrywise gap between `(A ∘ M)·W` and `(A·W) ∘ M` for an
/// `N×n` row-major `a` whose mask columns all equal `mask`.
pub fn commutation_gap(a: &[f64], n: usize, mask: &MaskStream, w: &GossipMatrix) -> f64 {
    let dim = mask.n_dims();
    let mut worst: f64 = 0.0;
    for r in 0..dim {
        let m = if mask.included(r) { 1.0 } else { 0.0 };
        let row = &a[r * n..(r + 1) * n];
        for c in 0..n {
            let aw: f64 = (0..n).map(|k| row[k] * w.get(k, c)).sum();
            let amw: f64 = (0..n).map(|k| row[k] * m * w.get(k, c)).sum();
            worst = worst.max(libm::fabs(amw - aw * m));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::PeerSelection;
    use crate::types::AdjacencyMatrix;

    /// Cyclic Jacobi eigenvalues of a small symmetric matrix, descending.
    fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
        let mut m = a.to_vec();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * n + j] * m[i * n + j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn generator(mode: PeerSelection, b: BandwidthMatrix, seed: u64) -> GossipGenerator {
        let b_star = b.positive_edges();
        GossipGenerator::new(mode, b, b_star, 10, SplitMix64::new(seed)).unwrap()
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }

    #[test]
    fn consensus_error_basics() {
        let same = vec![ParameterVector::from(vec![1.0, 2.0]); 3];
        assert_eq!(consensus_error(&same), 0.0);
        let m = [ParameterVector::from(vec![1.0]), ParameterVector::from(vec![-1.0])];
        assert_eq!(consensus_error(&m), 2.0);
    }

    #[test]
    fn pair_always_matched_has_rho_zero() {
        let mut g = generator(PeerSelection::Adaptive, BandwidthMatrix::uniform(2, 1.0).unwrap(), 1);
        let est = estimate_rho(&mut g, 200).unwrap();
        assert_eq!(est.rho, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn ring_of_four_has_rho_half() {
        let mut g = generator(PeerSelection::Ring, BandwidthMatrix::uniform(4, 1.0).unwrap(), 1);
        let est = estimate_rho(&mut g, 1000).unwrap();
        // analytic average of the two pairings, eigenvalues by Jacobi
        let w0 = GossipMatrix::from_matching(&Matching::from_pairs(4, &[(0, 1), (2, 3)]).unwrap());
        let w1 = GossipMatrix::from_matching(&Matching::from_pairs(4, &[(1, 2), (0, 3)]).unwrap());
        let avg: Vec<f64> = gram(&w0).iter().zip(gram(&w1)).map(|(a, b)| (a + b) / 2.0).collect();
        let ev = jacobi_eigenvalues(&avg, 4);
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 0.5).abs() < 1e-12);
        assert!((est.rho - ev[1]).abs() < 1e-9, "{}", est.rho);
    }

    #[test]
    fn power_iteration_agrees_with_jacobi() {
        let mut rng = SplitMix64::new(9);
        for n in [3usize, 5, 8, 12] {
            // random convex mixture of matching matrices
            let mut samples = Vec::new();
            for _ in 0..7 {
                let mut g = AdjacencyMatrix::complete(n);
                if rng.next_f64() < 0.5 {
                    g = AdjacencyMatrix::from_edges(n, &[(0, 1)]).unwrap();
                }
                samples.push(GossipMatrix::from_matching(&crate::matching::randomly_max_match(&g, &mut rng)));
            }
            let a = mean_gram(&samples).unwrap();
            let ev = jacobi_eigenvalues(&a, n);
            let rho = second_eigenvalue(&a, n).unwrap();
            assert!((rho - ev[1]).abs() < 1e-8, "n={n}: {rho} vs {}", ev[1]);
        }
    }

    #[test]
    fn split_workers_have_rho_one() {
        let mut rows = vec![vec![0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                if i != j && (i < 3) == (j < 3) {
                    rows[i][j] = 1.0;
                }
            }
        }
        let b = BandwidthMatrix::from_rows(&rows).unwrap();
        let mut g = generator(PeerSelection::Adaptive, b, 3);
        let est = estimate_rho(&mut g, 500).unwrap();
        assert!((est.rho - 1.0).abs() < 1e-9, "{}", est.rho);

        let mut g = generator(PeerSelection::Adaptive, BandwidthMatrix::uniform(6, 1.0).unwrap(), 3);
        assert!(estimate_rho(&mut g, 500).unwrap().rho < 1.0 - 1e-3);
    }

    #[test]
    fn too_few_samples() {
        let mut g = generator(PeerSelection::Adaptive, BandwidthMatrix::uniform(2, 1.0).unwrap(), 1);
        assert!(matches!(estimate_rho(&mut g, 10), Err(Error::Validation(_))));
    }

    #[test]
    fn full_mask_pair_reaches_consensus_in_one_step() {
        let mut g = generator(PeerSelection::Adaptive, BandwidthMatrix::uniform(2, 1.0).unwrap(), 1);
        let mut rng = SplitMix64::new(2);
        let curve = measure_contraction(&mut g, 1, 8, 3, 100, &mut rng).unwrap();
        assert_eq!(curve.ratios[0], 1.0);
        assert_eq!(curve.ratios[1], 0.0);

        let mut rows = vec![vec![1.0], vec![-1.0]];
        let m = Matching::from_pairs(2, &[(0, 1)]).unwrap();
        masked_gossip_step(&mut rows, &generate_mask(0, 1, 1).unwrap(), &m);
        assert_eq!(rows, [[0.0], [0.0]]);
    }

    #[test]
    fn half_mask_pair_halves_error() {
        let mut g = generator(PeerSelection::Adaptive, BandwidthMatrix::uniform(2, 1.0).unwrap(), 1);
        let mut rng = SplitMix64::new(3);
        let curve = measure_contraction(&mut g, 2, 4, 5, 10_000, &mut rng).unwrap();
        let f = curve.ratios[1];
        assert!((0.45..=0.55).contains(&f), "{f}");
        assert!(curve.check_geometric(0.5, 1.1).is_ok());
    }

    #[test]
    fn d_constant_values() {
        assert_eq!(d_constants(1.0, 0.0).unwrap(), (2.0, 2.0));
        assert!(matches!(d_constants(0.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(d_constants(0.5, 1.0), Err(Error::Domain(_))));
        let (d1, d2) = d_constants(0.01, 0.5).unwrap();
        // q + pρ = 0.995, q + pρ² = 0.9925
        let a: f64 = 1.0 - 0.995f64.sqrt();
        assert!((d1 - 2.0 / (a * a)).abs() / d1 < 1e-12);
        assert!((d2 - 2.0 / 0.0075).abs() / d2 < 1e-12);
        assert_eq!(d_constants(0.01, 0.5), d_constants(0.01, 0.5));
    }

    #[test]
    fn bound_values() {
        let ones = TheoryConstants::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let b = theorem_bound(&ones, 1, 100, 1.0, 1.0, 1.0).unwrap();
        // 9/20 + (6√3 + 2)/100 + 3/100 + 2/100
        let expected = 0.45 + (6.0 * 3f64.sqrt() + 2.0) / 100.0 + 0.03 + 0.02;
        assert!((b.total - expected).abs() < 1e-15);
        assert!((b.total - 0.623_923_048_454_132_6).abs() < 1e-12);

        let b0 = theorem_bound(&ones, 4, 100, 2.0, 3.0, 0.0).unwrap();
        assert_eq!(b0.terms[3], 0.0);

        let b4 = theorem_bound(&ones, 4, 400, 2.0, 3.0, 0.0).unwrap();
        assert!((b4.terms[0] - b0.terms[0] / 2.0).abs() < 1e-15);

        let zero_sigma = TheoryConstants::new(0.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(theorem_bound(&zero_sigma, 1, 1, 1.0, 1.0, 0.0), Err(Error::Domain(_))));
    }

    fn record(pairs: usize, min_bw: f64, mean_bw: f64) -> RoundRecord {
        RoundRecord {
            round: 0,
            pairs,
            bytes_per_worker: 0.0,
            min_bw,
            mean_bw,
            consensus_err: 0.0,
            mean_loss: 0.0,
            cum_time: 0.0,
        }
    }

    #[test]
    fn bandwidth_summaries() {
        let b = BandwidthMatrix::from_rows(&[
            vec![0.0, 2.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 4.0],
            vec![0.0, 0.0, 4.0, 0.0],
        ])
        .unwrap();
        let one = Matching::from_pairs(4, &[(2, 3)]).unwrap();
        assert_eq!(matched_bandwidth(&one, &b), Some((4.0, 4.0)));
        let two = Matching::from_pairs(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(matched_bandwidth(&two, &b), Some((2.0, 3.0)));
        assert_eq!(matched_bandwidth(&Matching::empty(4), &b), None);

        let s = bandwidth_stats(&[record(1, 3.0, 3.0), record(0, 0.0, 0.0), record(2, 1.0, 2.0)]).unwrap();
        assert_eq!(s.rounds, 2);
        assert_eq!(s.mean_min, 2.0);
        assert_eq!(s.mean_mean, 2.5);
        assert!(bandwidth_stats(&[]).is_err());
    }

    #[test]
    fn commutation_holds_for_matchings() {
        let mut rng = SplitMix64::new(12);
        for &(n, dim) in &[(2usize, 1usize), (4, 3), (8, 17)] {
            for _ in 0..50 {
                let a: Vec<f64> = (0..n * dim).map(|_| rng.standard_normal()).collect();
                let mask = generate_mask(rng.next_u64(), 2, dim).unwrap();
                let m = crate::matching::randomly_max_match(&AdjacencyMatrix::complete(n), &mut rng);
                let w = GossipMatrix::from_matching(&m);
                assert!(commutation_gap(&a, n, &mask, &w) <= 1e-12);
            }
        }
    }
}
