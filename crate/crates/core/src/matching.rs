//! Peer selection: blossom matching, recently-connected bookkeeping and the
//! per-round gossip-matrix generator.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::types::{AdjacencyMatrix, BandwidthMatrix, GossipMatrix, Matching, TimestampMatrix};

/// Candidate-edge graph over workers.
pub type Graph = AdjacencyMatrix;

const NONE: usize = usize::MAX;

/// Edmonds' blossom algorithm, O(V³). Vertices are processed in index order.
struct Blossom<'a> {
    adj: &'a [Vec<usize>],
    mate: Vec<usize>,
    parent: Vec<usize>,
    base: Vec<usize>,
    used: Vec<bool>,
    in_blossom: Vec<bool>,
    queue: Vec<usize>,
}

impl<'a> Blossom<'a> {
    fn new(adj: &'a [Vec<usize>]) -> Self {
        let n = adj.len();
        Self {
            adj,
            mate: vec![NONE; n],
            parent: vec![NONE; n],
            base: vec![0; n],
            used: vec![false; n],
            in_blossom: vec![false; n],
            queue: Vec::with_capacity(n),
        }
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        let mut seen = vec![false; self.adj.len()];
        loop {
            a = self.base[a];
            seen[a] = true;
            if self.mate[a] == NONE {
                break;
            }
            a = self.parent[self.mate[a]];
        }
        loop {
            b = self.base[b];
            if seen[b] {
                return b;
            }
            b = self.parent[self.mate[b]];
        }
    }

    fn mark_path(&mut self, mut v: usize, b: usize, mut child: usize) {
        while self.base[v] != b {
            self.in_blossom[self.base[v]] = true;
            self.in_blossom[self.base[self.mate[v]]] = true;
            self.parent[v] = child;
            child = self.mate[v];
            v = self.parent[self.mate[v]];
        }
    }

    /// End vertex of an augmenting path from `root`, if any.
    fn find_path(&mut self, root: usize) -> Option<usize> {
        let n = self.adj.len();
        self.used.iter_mut().for_each(|u| *u = false);
        self.parent.iter_mut().for_each(|p| *p = NONE);
        for (i, b) in self.base.iter_mut().enumerate() {
            *b = i;
        }
        self.used[root] = true;
        self.queue.clear();
        self.queue.push(root);
        let mut head = 0;
        while head < self.queue.len() {
            let v = self.queue[head];
            head += 1;
            for &to in &self.adj[v] {
                if self.base[v] == self.base[to] || self.mate[v] == to {
                    continue;
                }
                if to == root || (self.mate[to] != NONE && self.parent[self.mate[to]] != NONE) {
                    // odd cycle: contract it
                    let cur = self.lca(v, to);
                    self.in_blossom.iter_mut().for_each(|b| *b = false);
                    self.mark_path(v, cur, to);
                    self.mark_path(to, cur, v);
                    for i in 0..n {
                        if self.in_blossom[self.base[i]] {
                            self.base[i] = cur;
                            if !self.used[i] {
                                self.used[i] = true;
                                self.queue.push(i);
                            }
                        }
                    }
                } else if self.parent[to] == NONE {
                    self.parent[to] = v;
                    if self.mate[to] == NONE {
                        return Some(to);
                    }
                    let next = self.mate[to];
                    self.used[next] = true;
                    self.queue.push(next);
                }
            }
        }
        None
    }

    fn run(mut self) -> Vec<usize> {
        for root in 0..self.adj.len() {
            if self.mate[root] != NONE {
                continue;
            }
            let mut v = self.find_path(root);
            while let Some(end) = v {
                let pv = self.parent[end];
                let ppv = self.mate[pv];
                self.mate[end] = pv;
                self.mate[pv] = end;
                v = (ppv != NONE).then_some(ppv);
            }
        }
        self.mate
    }
}

fn to_matching(mate: Vec<usize>) -> Matching {
    Matching::from_partners(mate.into_iter().map(|m| (m != NONE).then_some(m)).collect())
        .expect("blossom produces a consistent mate array")
}

/// Maximum-cardinality matching on a general graph.
pub fn max_matching(g: &Graph) -> Matching {
    let adj: Vec<Vec<usize>> = (0..g.n()).map(|i| g.neighbors(i).collect()).collect();
    to_matching(Blossom::new(&adj).run())
}

/// Maximum matching computed under a uniformly random vertex order, so that
/// ties between maximum matchings are broken at random.
pub fn randomly_max_match(g: &Graph, rng: &mut SplitMix64) -> Matching {
    let n = g.n();
    // order[k] = original vertex processed k-th
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut label = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        label[v] = k;
    }
    let adj: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| {
            let mut nb: Vec<usize> = g.neighbors(v).map(|u| label[u]).collect();
            nb.sort_unstable();
            nb
        })
        .collect();
    let relabeled = Blossom::new(&adj).run();
    let mut mate = vec![NONE; n];
    for (k, &m) in relabeled.iter().enumerate() {
        if m != NONE {
            mate[order[k]] = order[m];
        }
    }
    to_matching(mate)
}

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    sets: usize,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            core::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        self.sets -= 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.sets
    }
}

fn components(g: &Graph) -> DisjointSets {
    let mut ds = DisjointSets::new(g.n());
    for (i, j) in g.edges() {
        ds.union(i, j);
    }
    ds
}

/// Whether the graph spans all its vertices in one component.
pub fn is_connected(g: &Graph) -> bool {
    components(g).set_count() <= 1
}

/// Edges `{i, j}` with `R_ij > t − T_thres`.
pub fn recently_connected(r: &TimestampMatrix, t_thres: i64, t: i64) -> Graph {
    let n = r.n();
    let mut q = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if r.get(i, j) > t - t_thres {
                q.insert(i, j);
            }
        }
    }
    q
}

/// Whether the recently-connected graph is connected.
pub fn if_connected(r: &TimestampMatrix, t_thres: i64, t: i64) -> bool {
    is_connected(&recently_connected(r, t_thres, t))
}

/// Bridging candidates: positive-bandwidth pairs whose endpoints sit in
/// different recently-connected components.
pub fn get_over_time_matrix(r: &TimestampMatrix, b: &BandwidthMatrix, t_thres: i64, t: i64) -> Graph {
    let n = r.n();
    let mut ds = components(&recently_connected(r, t_thres, t));
    let mut e = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if b.get(i, j) > 0.0 && ds.find(i) != ds.find(j) {
                e.insert(i, j);
            }
        }
    }
    e
}

/// Positive-bandwidth pairs among workers `m` left unmatched.
pub fn get_unmatch(b: &BandwidthMatrix, m: &Matching) -> Graph {
    let n = b.n();
    let mut g = AdjacencyMatrix::empty(n);
    let free: Vec<usize> = m.unmatched().collect();
    for (k, &i) in free.iter().enumerate() {
        for &j in &free[k + 1..] {
            if b.get(i, j) > 0.0 {
                g.insert(i, j);
            }
        }
    }
    g
}

/// Which candidate set the first matching of a round was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateSource {
    /// Recently-connected graph was connected; matched on `B*`.
    Threshold,
    /// Recently-connected graph was split; matched on cross-component edges.
    Bridging,
}

/// How a round's matching was assembled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingTrace {
    pub source: CandidateSource,
    pub first: Matching,
    /// Extra pairs among workers the first matching left out.
    pub fallback: Matching,
}

impl MatchingTrace {
    pub fn combined(&self) -> Matching {
        let mut m = self.first.clone();
        m.union(&self.fallback).expect("fallback only pairs unmatched workers");
        m
    }
}

/// One round of adaptive peer selection, keeping the intermediate steps.
pub fn trace_gossip_matching(
    b: &BandwidthMatrix,
    b_star: &AdjacencyMatrix,
    r: &TimestampMatrix,
    t_thres: i64,
    t: i64,
    rng: &mut SplitMix64,
) -> Result<MatchingTrace> {
    let n = b.n();
    if n < 2 {
        return Err(Error::validation("need at least two workers"));
    }
    if b_star.n() != n || r.n() != n {
        return Err(Error::validation("bandwidth, threshold graph and timestamps disagree on n"));
    }
    let (source, first) = if if_connected(r, t_thres, t) {
        (CandidateSource::Threshold, randomly_max_match(b_star, rng))
    } else {
        let e = get_over_time_matrix(r, b, t_thres, t);
        (CandidateSource::Bridging, randomly_max_match(&e, rng))
    };
    let fallback = if first.len() < n / 2 {
        randomly_max_match(&get_unmatch(b, &first), rng)
    } else {
        Matching::empty(n)
    };
    Ok(MatchingTrace { source, first, fallback })
}

/// Draws this round's matching and mixing matrix. The caller records the
/// matched pairs into `r` once the round completes.
pub fn generate_gossip_matrix(
    b: &BandwidthMatrix,
    b_star: &AdjacencyMatrix,
    r: &TimestampMatrix,
    t_thres: i64,
    t: i64,
    rng: &mut SplitMix64,
) -> Result<(GossipMatrix, Matching)> {
    let matching = trace_gossip_matching(b, b_star, r, t_thres, t, rng)?.combined();
    Ok((GossipMatrix::from_matching(&matching), matching))
}

/// Fixed alternating pairing of the cycle `0 → 1 → … → n−1 → 0`.
pub fn ring_matching(n: usize, round: u64) -> Matching {
    let mut m = Matching::empty(n);
    let offset = (round % 2) as usize;
    for k in 0..n / 2 {
        let i = (offset + 2 * k) % n;
        let j = (i + 1) % n;
        if i != j && !m.is_matched(i) && !m.is_matched(j) {
            m.add_pair(i, j).expect("checked disjoint");
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeerSelection {
    /// Threshold graph with bridging when recent links stop spanning the workers.
    Adaptive,
    /// Random maximum matching over every positive-bandwidth pair.
    Random,
    /// Alternating pairings of the ring.
    Ring,
}

/// Stateful round-by-round matching source. Owns the timestamp matrix.
#[derive(Clone, Debug)]
pub struct GossipGenerator {
    mode: PeerSelection,
    bandwidth: BandwidthMatrix,
    b_star: AdjacencyMatrix,
    timestamps: TimestampMatrix,
    t_thres: i64,
    round: u64,
    rng: SplitMix64,
}

impl GossipGenerator {
    pub fn new(
        mode: PeerSelection,
        bandwidth: BandwidthMatrix,
        b_star: AdjacencyMatrix,
        t_thres: i64,
        rng: SplitMix64,
    ) -> Result<Self> {
        let n = bandwidth.n();
        if n < 2 {
            return Err(Error::validation("need at least two workers"));
        }
        if b_star.n() != n {
            return Err(Error::validation("threshold graph size differs from bandwidth matrix"));
        }
        if t_thres < 1 {
            return Err(Error::validation("T_thres must be >= 1"));
        }
        Ok(Self {
            mode,
            timestamps: TimestampMatrix::new(n, t_thres),
            bandwidth,
            b_star,
            t_thres,
            round: 0,
            rng,
        })
    }

    pub fn n(&self) -> usize {
        self.bandwidth.n()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn mode(&self) -> PeerSelection {
        self.mode
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    pub fn b_star(&self) -> &AdjacencyMatrix {
        &self.b_star
    }

    pub fn timestamps(&self) -> &TimestampMatrix {
        &self.timestamps
    }

    pub fn t_thres(&self) -> i64 {
        self.t_thres
    }

    /// Replace one link speed between rounds. `B*` stays as initialized.
    pub fn update_link(&mut self, i: usize, j: usize, speed: f64) -> Result<()> {
        self.bandwidth.update_link(i, j, speed)
    }

    /// Matching for the current round; does not advance.
    pub fn propose(&mut self) -> Result<Matching> {
        let t = self.round as i64;
        match self.mode {
            PeerSelection::Adaptive => Ok(trace_gossip_matching(
                &self.bandwidth,
                &self.b_star,
                &self.timestamps,
                self.t_thres,
                t,
                &mut self.rng,
            )?
            .combined()),
            PeerSelection::Random => Ok(randomly_max_match(&self.bandwidth.positive_edges(), &mut self.rng)),
            PeerSelection::Ring => Ok(ring_matching(self.n(), self.round)),
        }
    }

    /// Marks the round complete: matched pairs become recently connected.
    pub fn commit(&mut self, matching: &Matching) {
        self.timestamps.record(matching, self.round as i64);
        self.round += 1;
    }

    /// `propose` then `commit`.
    pub fn step(&mut self) -> Result<(GossipMatrix, Matching)> {
        let m = self.propose()?;
        self.commit(&m);
        Ok((GossipMatrix::from_matching(&m), m))
    }
}
