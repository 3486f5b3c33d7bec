//! Desk-scale training objectives and their data.
//!
//! Every worker holds an [`Objective`] over its own shard. The global
//! objective is the mean of the workers' objectives.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Loss and gradient oracle over one worker's shard.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Samples in the shard. Batches index `0..num_samples()`.
    fn num_samples(&self) -> usize;

    /// Mean loss over `batch`; overwrites `grad` with the mean gradient.
    fn loss_grad(&self, x: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;

    fn loss(&self, x: &[f64], batch: &[usize]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.loss_grad(x, batch, &mut g)
    }

    /// Mean loss over the whole shard.
    fn full_loss(&self, x: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.loss(x, &all)
    }

    fn full_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.loss_grad(x, &all, grad)
    }
}

/// `½‖x − b‖²`, one deterministic "sample".
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    target: Vec<f64>,
}

impl Quadratic {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn loss_grad(&self, x: &[f64], _batch: &[usize], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for ((g, &xi), &bi) in grad.iter_mut().zip(x).zip(&self.target) {
            let d = xi - bi;
            *g = d;
            loss += d * d;
        }
        0.5 * loss
    }
}

/// One quadratic per worker with `b_i ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProblem {
    workers: Vec<Quadratic>,
}

impl QuadraticProblem {
    pub fn from_targets(targets: Vec<Vec<f64>>) -> Result<Self> {
        let dim = targets.first().map(Vec::len).ok_or_else(|| Error::validation("need at least one worker"))?;
        if dim == 0 || targets.iter().any(|t| t.len() != dim) {
            return Err(Error::validation("targets must share a positive dimension"));
        }
        Ok(Self {
            workers: targets.into_iter().map(Quadratic::new).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.workers.len()
    }

    pub fn dim(&self) -> usize {
        self.workers[0].dim()
    }

    pub fn worker(&self, i: usize) -> &Quadratic {
        &self.workers[i]
    }

    pub fn objectives(&self) -> Vec<Arc<dyn Objective>> {
        self.workers
            .iter()
            .map(|q| Arc::new(q.clone()) as Arc<dyn Objective>)
            .collect()
    }

    /// `x* = mean(b_i)`.
    pub fn optimum(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let mut x = vec![0.0; self.dim()];
        for q in &self.workers {
            for (xj, bj) in x.iter_mut().zip(q.target()) {
                *xj += bj;
            }
        }
        x.iter_mut().for_each(|v| *v /= n);
        x
    }

    /// `f(x) = (1/n) Σ ½‖x − b_i‖²`.
    pub fn global_loss(&self, x: &[f64]) -> f64 {
        self.workers.iter().map(|q| q.full_loss(x)).sum::<f64>() / self.n() as f64
    }

    /// `∇f(x) = x − x*`.
    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.optimum()).map(|(a, b)| a - b).collect()
    }

    pub fn f_star(&self) -> f64 {
        self.global_loss(&self.optimum())
    }
}

pub fn make_quadratic(n_workers: usize, dim: usize, rng: &mut SplitMix64) -> Result<QuadraticProblem> {
    if n_workers == 0 || dim == 0 {
        return Err(Error::validation("quadratic needs n >= 1 and N >= 1"));
    }
    let targets = (0..n_workers)
        .map(|_| (0..dim).map(|_| rng.standard_normal()).collect())
        .collect();
    QuadraticProblem::from_targets(targets)
}

/// Feature rows (the last feature is a constant 1) with ±1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_features: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if n_features == 0 || features.len() != n_features * labels.len() {
            return Err(Error::validation("feature matrix shape does not match labels"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(Error::validation(format!("labels must be +1 or -1, got {bad}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("features must be finite"));
        }
        Ok(Self {
            n_features,
            features,
            labels,
        })
    }

    /// Rows of raw features plus a trailing label column. Labels `<= 0` become −1,
    /// positive ones +1, and a constant bias feature is appended.
    pub fn from_labeled_rows(cols: usize, data: &[f64]) -> Result<Self> {
        if cols < 2 || data.len() % cols != 0 {
            return Err(Error::validation("need at least one feature column and a label column"));
        }
        let rows = data.len() / cols;
        let mut features = Vec::with_capacity(rows * cols);
        let mut labels = Vec::with_capacity(rows);
        for row in data.chunks_exact(cols) {
            features.extend_from_slice(&row[..cols - 1]);
            features.push(1.0);
            labels.push(if row[cols - 1] > 0.0 { 1.0 } else { -1.0 });
        }
        Self::new(cols, features, labels)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

/// Two Gaussian clusters at `±μ` (`‖μ‖ = 1`), unit noise, plus a bias column.
pub fn gaussian_clusters(n_samples: usize, n_features: usize, rng: &mut SplitMix64) -> Result<Dataset> {
    if n_features < 2 {
        return Err(Error::validation("need at least one feature besides the bias"));
    }
    let raw = n_features - 1;
    let mut mu: Vec<f64> = (0..raw).map(|_| rng.standard_normal()).collect();
    let norm = libm::sqrt(mu.iter().map(|v| v * v).sum::<f64>());
    mu.iter_mut().for_each(|v| *v /= norm);
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let y = if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 };
        for m in &mu {
            features.push(y * m + rng.standard_normal());
        }
        features.push(1.0);
        labels.push(y);
    }
    Dataset::new(n_features, features, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    /// Shuffle, then deal round-robin.
    Iid,
    /// Sort by label, then cut into contiguous blocks.
    LabelSkew,
}

/// Disjoint index sets covering `0..data.len()`, one per worker.
pub fn partition(data: &Dataset, n_workers: usize, scheme: Partition, rng: &mut SplitMix64) -> Result<Vec<Vec<usize>>> {
    if n_workers == 0 || data.len() < n_workers {
        return Err(Error::validation(format!(
            "{} samples cannot be split across {n_workers} workers",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut shards = vec![Vec::new(); n_workers];
    match scheme {
        Partition::Iid => {
            rng.shuffle(&mut idx);
            for (k, i) in idx.into_iter().enumerate() {
                shards[k % n_workers].push(i);
            }
        }
        Partition::LabelSkew => {
            idx.sort_by(|&a, &b| data.label(a).total_cmp(&data.label(b)).then(a.cmp(&b)));
            let base = idx.len() / n_workers;
            let extra = idx.len() % n_workers;
            let mut start = 0;
            for (w, shard) in shards.iter_mut().enumerate() {
                let len = base + usize::from(w < extra);
                shard.extend_from_slice(&idx[start..start + len]);
                start += len;
            }
        }
    }
    Ok(shards)
}

pub const LOGISTIC_L2: f64 = 1e-4;

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// `1 / (1 + e^{-z})` without overflow.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `softplus(−y·wᵀa) + (λ/2)‖w‖²` averaged over a batch of the shard.
#[derive(Clone, Debug)]
pub struct Logistic {
    data: Arc<Dataset>,
    shard: Vec<usize>,
    l2: f64,
}

impl Logistic {
    pub fn new(data: Arc<Dataset>, shard: Vec<usize>, l2: f64) -> Self {
        Self { data, shard, l2 }
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.data.n_features()
    }

    fn num_samples(&self) -> usize {
        self.shard.len()
    }

    fn loss_grad(&self, x: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &b in batch {
            let i = self.shard[b];
            let a = self.data.row(i);
            let y = self.data.label(i);
            let margin = y * a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
            loss += softplus(-margin);
            let coef = -y * sigmoid(-margin);
            for (g, &aj) in grad.iter_mut().zip(a) {
                *g += coef * aj;
            }
        }
        let m = batch.len().max(1) as f64;
        let sq: f64 = x.iter().map(|v| v * v).sum();
        for (g, &xj) in grad.iter_mut().zip(x) {
            *g = *g / m + self.l2 * xj;
        }
        loss / m + 0.5 * self.l2 * sq
    }
}

pub fn make_logistic(
    n_workers: usize,
    n_samples: usize,
    dim: usize,
    scheme: Partition,
    rng: &mut SplitMix64,
) -> Result<Vec<Arc<dyn Objective>>> {
    if n_samples < n_workers {
        return Err(Error::validation("need at least one sample per worker"));
    }
    let data = Arc::new(gaussian_clusters(n_samples, dim, rng)?);
    logistic_over(data, n_workers, scheme, rng)
}

/// Logistic objectives over an existing dataset.
pub fn logistic_over(
    data: Arc<Dataset>,
    n_workers: usize,
    scheme: Partition,
    rng: &mut SplitMix64,
) -> Result<Vec<Arc<dyn Objective>>> {
    Ok(partition(&data, n_workers, scheme, rng)?
        .into_iter()
        .map(|s| Arc::new(Logistic::new(data.clone(), s, LOGISTIC_L2)) as Arc<dyn Objective>)
        .collect())
}

/// One hidden tanh layer, scalar output, logistic loss on ±1 labels.
///
/// Parameters are laid out as `[W1 (h×d, row-major), b1 (h), w2 (h), b2]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    data: Arc<Dataset>,
    shard: Vec<usize>,
    hidden: usize,
}

impl Mlp {
    pub fn new(data: Arc<Dataset>, shard: Vec<usize>, hidden: usize) -> Self {
        Self { data, shard, hidden }
    }

    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        hidden * (inputs + 2) + 1
    }

    /// Network output for one input row.
    pub fn forward(&self, x: &[f64], a: &[f64]) -> f64 {
        let d = self.data.n_features();
        let h = self.hidden;
        let (w1, rest) = x.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut s = b2[0];
        for k in 0..h {
            let z = b1[k] + w1[k * d..(k + 1) * d].iter().zip(a).map(|(u, v)| u * v).sum::<f64>();
            s += w2[k] * libm::tanh(z);
        }
        s
    }

    /// Small random weights, identical for every caller with the same seed.
    pub fn initial_point(&self, rng: &mut SplitMix64) -> Vec<f64> {
        let d = self.data.n_features();
        let scale = 1.0 / libm::sqrt(d as f64);
        (0..self.dim()).map(|_| scale * rng.standard_normal()).collect()
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        Self::param_count(self.data.n_features(), self.hidden)
    }

    fn num_samples(&self) -> usize {
        self.shard.len()
    }

    fn loss_grad(&self, x: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let d = self.data.n_features();
        let h = self.hidden;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w1, rest) = x.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let mut act = vec![0.0; h];
        let mut loss = 0.0;
        for &b in batch {
            let i = self.shard[b];
            let a = self.data.row(i);
            let y = self.data.label(i);
            let mut s = b2[0];
            for k in 0..h {
                let z = b1[k] + w1[k * d..(k + 1) * d].iter().zip(a).map(|(u, v)| u * v).sum::<f64>();
                act[k] = libm::tanh(z);
                s += w2[k] * act[k];
            }
            loss += softplus(-y * s);
            // dL/ds
            let ds = -y * sigmoid(-y * s);
            let (g_w1, g_rest) = grad.split_at_mut(h * d);
            let (g_b1, g_rest) = g_rest.split_at_mut(h);
            let (g_w2, g_b2) = g_rest.split_at_mut(h);
            g_b2[0] += ds;
            for k in 0..h {
                g_w2[k] += ds * act[k];
                let dz = ds * w2[k] * (1.0 - act[k] * act[k]);
                g_b1[k] += dz;
                for (g, &aj) in g_w1[k * d..(k + 1) * d].iter_mut().zip(a) {
                    *g += dz * aj;
                }
            }
        }
        let m = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        loss / m
    }
}

pub fn make_mlp(
    n_workers: usize,
    n_samples: usize,
    inputs: usize,
    hidden: usize,
    scheme: Partition,
    rng: &mut SplitMix64,
) -> Result<Vec<Arc<dyn Objective>>> {
    if hidden == 0 {
        return Err(Error::validation("hidden layer needs at least one unit"));
    }
    if n_samples < n_workers {
        return Err(Error::validation("need at least one sample per worker"));
    }
    let data = Arc::new(gaussian_clusters(n_samples, inputs, rng)?);
    mlp_over(data, n_workers, hidden, scheme, rng)
}

pub fn mlp_over(
    data: Arc<Dataset>,
    n_workers: usize,
    hidden: usize,
    scheme: Partition,
    rng: &mut SplitMix64,
) -> Result<Vec<Arc<dyn Objective>>> {
    Ok(partition(&data, n_workers, scheme, rng)?
        .into_iter()
        .map(|s| Arc::new(Mlp::new(data.clone(), s, hidden)) as Arc<dyn Objective>)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Worst per-coordinate relative gap between the analytic gradient and
    /// central differences with step `h`.
    fn fd_error(obj: &dyn Objective, x: &[f64], batch: &[usize], h: f64) -> f64 {
        let mut g = vec![0.0; obj.dim()];
        obj.loss_grad(x, batch, &mut g);
        let mut xp = x.to_vec();
        let mut worst: f64 = 0.0;
        let scale = g.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for j in 0..x.len() {
            xp[j] = x[j] + h;
            let fp = obj.loss(&xp, batch);
            xp[j] = x[j] - h;
            let fm = obj.loss(&xp, batch);
            xp[j] = x[j];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / scale);
        }
        worst
    }

    #[test]
    fn quadratic_stationary_point() {
        let q = Quadratic::new(vec![1.0, -2.0]);
        let mut g = vec![9.0; 2];
        assert_eq!(q.loss_grad(&[1.0, -2.0], &[0], &mut g), 0.0);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn quadratic_closed_forms() {
        let p = QuadraticProblem::from_targets(vec![vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(p.optimum(), [1.0]);
        // mean of ½(1)² and ½(1)²; the unnormalized sum would be 1
        assert_eq!(p.f_star(), 0.5);
        assert_eq!(p.n() as f64 * p.f_star(), 1.0);

        let p = QuadraticProblem::from_targets(vec![vec![3.0, 1.0]; 4]).unwrap();
        assert_eq!(p.optimum(), [3.0, 1.0]);
        assert_eq!(p.f_star(), 0.0);

        let mut rng = SplitMix64::new(4);
        let p = make_quadratic(7, 5, &mut rng).unwrap();
        let opt = p.optimum();
        for j in 0..5 {
            let mean = (0..7).map(|i| p.worker(i).target()[j]).sum::<f64>() / 7.0;
            assert!((opt[j] - mean).abs() < 1e-12);
        }
        // the optimum zeroes the global gradient
        assert!(p.global_grad(&opt).iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn logistic_zero_weights_give_ln2() {
        let mut rng = SplitMix64::new(1);
        let objs = make_logistic(2, 40, 5, Partition::Iid, &mut rng).unwrap();
        let x = vec![0.0; 5];
        for o in &objs {
            assert!((o.full_loss(&x) - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(2);
        let objs = make_logistic(1, 64, 6, Partition::Iid, &mut rng).unwrap();
        let o = &objs[0];
        let batch: Vec<usize> = (0..16).collect();
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let e = fd_error(o.as_ref(), &x, &batch, 1e-5);
            assert!(e < 1e-6, "relative error {e}");
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(3);
        let objs = make_mlp(1, 32, 4, 5, Partition::Iid, &mut rng).unwrap();
        let o = &objs[0];
        assert_eq!(o.dim(), Mlp::param_count(4, 5));
        let batch: Vec<usize> = (0..8).collect();
        for _ in 0..100 {
            let x: Vec<f64> = (0..o.dim()).map(|_| 0.5 * rng.standard_normal()).collect();
            let e = fd_error(o.as_ref(), &x, &batch, 1e-5);
            assert!(e < 1e-5, "relative error {e}");
        }
    }

    #[test]
    fn mlp_zero_weights_are_uninformative() {
        let mut rng = SplitMix64::new(5);
        let data = Arc::new(gaussian_clusters(10, 3, &mut rng).unwrap());
        let m = Mlp::new(data.clone(), (0..10).collect(), 4);
        let x = vec![0.0; m.dim()];
        for i in 0..10 {
            assert_eq!(m.forward(&x, data.row(i)), 0.0);
        }
        assert!((m.full_loss(&x) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mlp_overfits_one_sample() {
        let mut rng = SplitMix64::new(6);
        let data = Arc::new(gaussian_clusters(1, 3, &mut rng).unwrap());
        let m = Mlp::new(data, vec![0], 4);
        let mut x = m.initial_point(&mut rng);
        let mut g = vec![0.0; m.dim()];
        let mut loss = f64::INFINITY;
        for _ in 0..20_000 {
            loss = m.loss_grad(&x, &[0], &mut g);
            if loss < 1e-3 {
                break;
            }
            for (xj, gj) in x.iter_mut().zip(&g) {
                *xj -= 0.5 * gj;
            }
        }
        assert!(loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn partitions_cover_disjointly() {
        let mut rng = SplitMix64::new(7);
        let data = gaussian_clusters(103, 3, &mut rng).unwrap();
        for scheme in [Partition::Iid, Partition::LabelSkew] {
            let shards = partition(&data, 4, scheme, &mut rng).unwrap();
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
            for s in &shards {
                assert!((25..=26).contains(&s.len()));
            }
        }
        assert!(partition(&data, 200, Partition::Iid, &mut rng).is_err());
    }

    #[test]
    fn label_skew_concentrates_classes() {
        let mut rng = SplitMix64::new(8);
        let data = gaussian_clusters(400, 3, &mut rng).unwrap();
        let shards = partition(&data, 4, Partition::LabelSkew, &mut rng).unwrap();
        let positive = |s: &Vec<usize>| s.iter().filter(|&&i| data.label(i) > 0.0).count() as f64 / s.len() as f64;
        // first shard is all negatives, last all positives
        assert_eq!(positive(&shards[0]), 0.0);
        assert_eq!(positive(&shards[3]), 1.0);
        let iid = partition(&data, 4, Partition::Iid, &mut rng).unwrap();
        for s in &iid {
            assert!((0.3..0.7).contains(&positive(s)));
        }
    }

    #[test]
    fn labeled_rows_gain_a_bias_column() {
        let d = Dataset::from_labeled_rows(3, &[1.0, 2.0, 1.0, 3.0, 4.0, 0.0]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(0), &[1.0, 2.0, 1.0]);
        assert_eq!(d.label(0), 1.0);
        assert_eq!(d.label(1), -1.0);
        assert!(Dataset::from_labeled_rows(3, &[1.0, 2.0]).is_err());
    }
}
