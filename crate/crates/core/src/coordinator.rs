//! Round bookkeeping on the coordinator: threshold graph, seed and peer
//! assignment, the ROUND_END barrier, and the analytic traffic model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, ProtocolError, Result};
use crate::matching::{GossipGenerator, PeerSelection};
use crate::rng::SplitMix64;
use crate::types::{AdjacencyMatrix, BandwidthMatrix, Matching, ParameterVector};
use crate::wire::{self, Message, RoundEnd, RoundStart, NO_PEER};

/// Pairs whose link speed reaches `b_thres`. Dead links never qualify.
pub fn get_new_connected_graph(b: &BandwidthMatrix, b_thres: f64) -> AdjacencyMatrix {
    let n = b.n();
    let mut g = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = b.get(i, j);
            if s > 0.0 && s >= b_thres {
                g.insert(i, j);
            }
        }
    }
    g
}

/// Median of the positive link speeds (mean of the middle two for an even count).
pub fn median_positive_bandwidth(b: &BandwidthMatrix) -> Option<f64> {
    let mut s = b.positive_speeds();
    if s.is_empty() {
        return None;
    }
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinatorConfig {
    pub t_thres: i64,
    /// `None` picks the median positive link speed.
    pub b_thres: Option<f64>,
    pub master_seed: u64,
    pub peer_selection: PeerSelection,
}

/// What every worker needs to run round `round`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundAssignment {
    pub round: u64,
    pub seed: u64,
    pub matching: Matching,
}

impl RoundAssignment {
    pub fn round_start_for(&self, worker: usize) -> RoundStart {
        RoundStart {
            round: self.round,
            seed: self.seed,
            peer_id: self.matching.peer_of(worker).map_or(NO_PEER, |p| p as u32),
            flags: 0,
        }
    }
}

/// A finished round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub seed: u64,
    pub matching: Matching,
    /// Local loss reported by each worker.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Pending {
    assignment: RoundAssignment,
    losses: Vec<Option<f64>>,
    received: usize,
}

#[derive(Clone, Debug)]
pub struct Coordinator {
    generator: GossipGenerator,
    seeds: SplitMix64,
    b_thres: f64,
    pending: Option<Pending>,
    log: Vec<RoundLog>,
    model_bytes_received: u64,
}

impl Coordinator {
    pub fn new(bandwidth: BandwidthMatrix, config: &CoordinatorConfig) -> Result<Self> {
        let b_thres = match config.b_thres {
            Some(t) if t.is_finite() && t >= 0.0 => t,
            Some(t) => return Err(Error::validation(format!("B_thres must be finite and >= 0, got {t}"))),
            None => median_positive_bandwidth(&bandwidth)
                .ok_or_else(|| Error::Config(String::from("bandwidth matrix has no positive link")))?,
        };
        let b_star = get_new_connected_graph(&bandwidth, b_thres);
        let mut seeds = SplitMix64::new(config.master_seed);
        let matcher = seeds.fork();
        let generator = GossipGenerator::new(config.peer_selection, bandwidth, b_star, config.t_thres, matcher)?;
        Ok(Self {
            generator,
            seeds,
            b_thres,
            pending: None,
            log: Vec::new(),
            model_bytes_received: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.generator.n()
    }

    /// Next round to run (number of completed rounds).
    pub fn round(&self) -> u64 {
        self.generator.round()
    }

    pub fn b_thres(&self) -> f64 {
        self.b_thres
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        self.generator.bandwidth()
    }

    pub fn b_star(&self) -> &AdjacencyMatrix {
        self.generator.b_star()
    }

    pub fn generator(&self) -> &GossipGenerator {
        &self.generator
    }

    pub fn log(&self) -> &[RoundLog] {
        &self.log
    }

    pub fn in_progress(&self) -> Option<&RoundAssignment> {
        self.pending.as_ref().map(|p| &p.assignment)
    }

    /// Draws the round seed, then the matching.
    pub fn begin_round(&mut self) -> Result<RoundAssignment> {
        if let Some(p) = &self.pending {
            return Err(ProtocolError::RoundInProgress(p.assignment.round).into());
        }
        let seed = self.seeds.next_u64();
        let matching = self.generator.propose()?;
        let assignment = RoundAssignment {
            round: self.round(),
            seed,
            matching,
        };
        self.pending = Some(Pending {
            assignment: assignment.clone(),
            losses: vec![None; self.n()],
            received: 0,
        });
        Ok(assignment)
    }

    /// Records one ROUND_END. Returns the finished round once all workers reported.
    pub fn acknowledge(&mut self, ack: &RoundEnd) -> Result<Option<RoundLog>> {
        let n = self.n();
        let pending = self.pending.as_mut().ok_or(ProtocolError::NoRoundInProgress)?;
        let w = ack.worker_id as usize;
        if w >= n {
            return Err(ProtocolError::UnknownWorker(ack.worker_id).into());
        }
        if ack.round != pending.assignment.round {
            return Err(ProtocolError::RoundMismatch {
                worker: ack.worker_id,
                expected: pending.assignment.round,
                got: ack.round,
            }
            .into());
        }
        if pending.losses[w].is_some() {
            return Err(ProtocolError::DuplicateAck {
                worker: ack.worker_id,
                round: ack.round,
            }
            .into());
        }
        pending.losses[w] = Some(ack.local_loss);
        pending.received += 1;
        if pending.received < n {
            return Ok(None);
        }
        let done = self.pending.take().expect("pending round");
        self.generator.commit(&done.assignment.matching);
        let entry = RoundLog {
            round: done.assignment.round,
            seed: done.assignment.seed,
            matching: done.assignment.matching,
            losses: done.losses.into_iter().map(|l| l.expect("all reported")).collect(),
        };
        self.log.push(entry.clone());
        Ok(Some(entry))
    }

    /// Drops the round in progress without advancing anything.
    pub fn abort_round(&mut self) {
        self.pending = None;
    }

    /// Live link measurements from `worker`; take effect from the next round.
    pub fn apply_bandwidth_report(&mut self, worker: usize, entries: &[(u32, f64)]) -> Result<()> {
        for &(peer, speed) in entries {
            let peer = peer as usize;
            if peer >= self.n() {
                return Err(ProtocolError::UnknownWorker(peer as u32).into());
            }
            self.generator.update_link(worker, peer, speed)?;
        }
        Ok(())
    }

    /// Decodes the worker's MODEL_FULL reply and counts its bytes.
    pub fn accept_final_model(&mut self, frame: &[u8], dim: usize) -> Result<ParameterVector> {
        if let Some(p) = &self.pending {
            return Err(ProtocolError::RoundInProgress(p.assignment.round).into());
        }
        let values = match wire::decode(frame)? {
            Message::ModelFull(v) => v,
            other => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "MODEL_FULL",
                    got: other.name(),
                }
                .into())
            }
        };
        if values.len() != dim {
            return Err(ProtocolError::CountMismatch {
                expected: dim,
                got: values.len(),
            }
            .into());
        }
        self.model_bytes_received += frame.len() as u64;
        Ok(ParameterVector::from(values))
    }

    /// Every model byte the coordinator has received.
    pub fn model_bytes_received(&self) -> u64 {
        self.model_bytes_received
    }
}

/// The eight rows of the communication-cost comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostAlgorithm {
    PsPsgd,
    AllReduce,
    TopK,
    FedAvg,
    SFedAvg,
    DPsgd,
    DcdPsgd,
    Saps,
}

impl CostAlgorithm {
    pub const ALL: [CostAlgorithm; 8] = [
        CostAlgorithm::PsPsgd,
        CostAlgorithm::AllReduce,
        CostAlgorithm::TopK,
        CostAlgorithm::FedAvg,
        CostAlgorithm::SFedAvg,
        CostAlgorithm::DPsgd,
        CostAlgorithm::DcdPsgd,
        CostAlgorithm::Saps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostAlgorithm::PsPsgd => "ps-psgd",
            CostAlgorithm::AllReduce => "all-reduce",
            CostAlgorithm::TopK => "topk-psgd",
            CostAlgorithm::FedAvg => "fedavg",
            CostAlgorithm::SFedAvg => "s-fedavg",
            CostAlgorithm::DPsgd => "d-psgd",
            CostAlgorithm::DcdPsgd => "dcd-psgd",
            CostAlgorithm::Saps => "saps-psgd",
        }
    }

    pub fn needs_neighbors(self) -> bool {
        matches!(self, CostAlgorithm::DPsgd | CostAlgorithm::DcdPsgd)
    }
}

impl fmt::Display for CostAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "pspsgd" | "ps" => CostAlgorithm::PsPsgd,
            "allreduce" | "allreducepsgd" => CostAlgorithm::AllReduce,
            "topk" | "topkpsgd" => CostAlgorithm::TopK,
            "fedavg" => CostAlgorithm::FedAvg,
            "sfedavg" => CostAlgorithm::SFedAvg,
            "dpsgd" => CostAlgorithm::DPsgd,
            "dcdpsgd" => CostAlgorithm::DcdPsgd,
            "saps" | "sapspsgd" => CostAlgorithm::Saps,
            _ => return Err(Error::validation(format!("unknown algorithm '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelInput {
    pub algorithm: CostAlgorithm,
    /// Model size N.
    pub n_params: u64,
    pub n_workers: u64,
    pub rounds: u64,
    pub ratio: u64,
    /// Neighbors per worker; gossip baselines only.
    pub n_peers: Option<u64>,
}

/// `(server, worker)` parameter counts communicated over a whole run.
pub fn comm_cost(input: &CostModelInput) -> Result<(f64, f64)> {
    for (name, v) in [
        ("N", input.n_params),
        ("n", input.n_workers),
        ("T", input.rounds),
        ("c", input.ratio),
    ] {
        if v == 0 {
            return Err(Error::validation(format!("{name} must be positive")));
        }
    }
    let big_n = input.n_params as f64;
    let n = input.n_workers as f64;
    let t = input.rounds as f64;
    let c = input.ratio as f64;
    let np = if input.algorithm.needs_neighbors() {
        match input.n_peers {
            Some(p) if p > 1 => p as f64,
            Some(p) => return Err(Error::validation(format!("n_p must be > 1, got {p}"))),
            None => {
                return Err(Error::validation(format!(
                    "{} needs the neighbor count n_p",
                    input.algorithm
                )))
            }
        }
    } else {
        0.0
    };
    Ok(match input.algorithm {
        CostAlgorithm::PsPsgd => (2.0 * big_n * n * t, 2.0 * big_n * t),
        CostAlgorithm::AllReduce => (0.0, 2.0 * big_n * t),
        CostAlgorithm::TopK => (0.0, 2.0 * n * (big_n / c) * t),
        CostAlgorithm::FedAvg => (2.0 * big_n * n * t, 2.0 * big_n * t),
        CostAlgorithm::SFedAvg => ((big_n + 2.0 * big_n / c) * n * t, (big_n + 2.0 * big_n / c) * t),
        CostAlgorithm::DPsgd => (big_n, 4.0 * np * big_n * t),
        CostAlgorithm::DcdPsgd => (big_n, 4.0 * np * (big_n / c) * t),
        CostAlgorithm::Saps => (big_n, 2.0 * (big_n / c) * t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> CoordinatorConfig {
        CoordinatorConfig {
            t_thres: 10,
            b_thres: None,
            master_seed: seed,
            peer_selection: PeerSelection::Adaptive,
        }
    }

    fn ack(round: u64, worker: u32) -> RoundEnd {
        RoundEnd {
            round,
            worker_id: worker,
            local_loss: worker as f64,
        }
    }

    #[test]
    fn threshold_graph() {
        let b = BandwidthMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(get_new_connected_graph(&b, 1.0).edges().collect::<Vec<_>>(), [(0, 1)]);
        assert!(get_new_connected_graph(&b, 3.0).is_empty());
        let b = BandwidthMatrix::from_rows(&[
            vec![0.0, 2.0, 0.0],
            vec![2.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(get_new_connected_graph(&b, 0.0), b.positive_edges());
        // inclusive comparison
        assert!(get_new_connected_graph(&b, 2.0).has_edge(0, 1));
    }

    #[test]
    fn median_default() {
        let b = BandwidthMatrix::from_rows(&[
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 0.0],
            vec![3.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(median_positive_bandwidth(&b), Some(2.0));
        assert_eq!(median_positive_bandwidth(&BandwidthMatrix::uniform(3, 0.0).unwrap()), None);
    }

    #[test]
    fn two_workers_one_round() {
        let mut c = Coordinator::new(BandwidthMatrix::uniform(2, 1.0).unwrap(), &config(1)).unwrap();
        let a = c.begin_round().unwrap();
        assert_eq!(a.round, 0);
        assert_eq!(a.round_start_for(0).peer(), Some(1));
        assert_eq!(c.acknowledge(&ack(0, 0)).unwrap(), None);
        assert_eq!(c.round(), 0);
        let done = c.acknowledge(&ack(0, 1)).unwrap().unwrap();
        assert_eq!(done.losses, [0.0, 1.0]);
        assert_eq!(c.round(), 1);
        assert_eq!(c.generator().timestamps().get(0, 1), 0);
    }

    #[test]
    fn barrier_errors() {
        let mut c = Coordinator::new(BandwidthMatrix::uniform(3, 1.0).unwrap(), &config(2)).unwrap();
        assert_eq!(
            c.acknowledge(&ack(0, 0)).unwrap_err(),
            Error::Protocol(ProtocolError::NoRoundInProgress)
        );
        c.begin_round().unwrap();
        assert!(matches!(
            c.begin_round(),
            Err(Error::Protocol(ProtocolError::RoundInProgress(0)))
        ));
        c.acknowledge(&ack(0, 1)).unwrap();
        assert_eq!(
            c.acknowledge(&ack(0, 1)).unwrap_err(),
            Error::Protocol(ProtocolError::DuplicateAck { worker: 1, round: 0 })
        );
        assert_eq!(
            c.acknowledge(&ack(5, 2)).unwrap_err(),
            Error::Protocol(ProtocolError::RoundMismatch {
                worker: 2,
                expected: 0,
                got: 5
            })
        );
        assert_eq!(
            c.acknowledge(&ack(0, 9)).unwrap_err(),
            Error::Protocol(ProtocolError::UnknownWorker(9))
        );
        c.abort_round();
        assert_eq!(c.round(), 0);
        assert!(c.log().is_empty());
    }

    #[test]
    fn ten_rounds_perfect_on_complete_four() {
        let mut c = Coordinator::new(BandwidthMatrix::uniform(4, 1.0).unwrap(), &config(3)).unwrap();
        for t in 0..10 {
            let a = c.begin_round().unwrap();
            assert_eq!(a.matching.len(), 2);
            for w in 0..4 {
                c.acknowledge(&ack(t, w)).unwrap();
            }
        }
        let rounds: Vec<u64> = c.log().iter().map(|l| l.round).collect();
        assert_eq!(rounds, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_schedule() {
        let run = |seed| {
            let mut c = Coordinator::new(BandwidthMatrix::uniform(6, 1.0).unwrap(), &config(seed)).unwrap();
            let mut out = Vec::new();
            for t in 0..20 {
                let a = c.begin_round().unwrap();
                out.push((a.seed, a.matching.clone()));
                for w in 0..6 {
                    c.acknowledge(&ack(t, w)).unwrap();
                }
            }
            out
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn final_model_accounting() {
        let mut c = Coordinator::new(BandwidthMatrix::uniform(2, 1.0).unwrap(), &config(4)).unwrap();
        let frame = wire::encode(&Message::ModelFull(vec![1.0, 2.0, 3.0]));
        let x = c.accept_final_model(&frame, 3).unwrap();
        assert_eq!(&*x, &[1.0, 2.0, 3.0]);
        assert_eq!(c.model_bytes_received(), (wire::MODEL_FULL_OVERHEAD + 24) as u64);
        assert!(c.accept_final_model(&frame, 4).is_err());
    }

    #[test]
    fn bandwidth_reports_update_links() {
        let mut c = Coordinator::new(BandwidthMatrix::uniform(3, 1.0).unwrap(), &config(5)).unwrap();
        c.apply_bandwidth_report(0, &[(2, 7.0)]).unwrap();
        assert_eq!(c.bandwidth().get(2, 0), 7.0);
        assert!(c.apply_bandwidth_report(0, &[(5, 1.0)]).is_err());
    }

    fn cost(algorithm: CostAlgorithm, n_peers: Option<u64>) -> Result<(f64, f64)> {
        comm_cost(&CostModelInput {
            algorithm,
            n_params: 100,
            n_workers: 8,
            rounds: 10,
            ratio: 10,
            n_peers,
        })
    }

    #[test]
    fn cost_spot_values() {
        assert_eq!(cost(CostAlgorithm::Saps, None).unwrap(), (100.0, 200.0));
        assert_eq!(cost(CostAlgorithm::PsPsgd, None).unwrap(), (16000.0, 2000.0));
        assert_eq!(cost(CostAlgorithm::DPsgd, Some(2)).unwrap(), (100.0, 8000.0));
        assert!(cost(CostAlgorithm::DPsgd, None).is_err());
        assert!(cost(CostAlgorithm::DcdPsgd, Some(1)).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in CostAlgorithm::ALL {
            assert_eq!(a.name().parse::<CostAlgorithm>().unwrap(), a);
        }
        assert_eq!("SAPS".parse::<CostAlgorithm>().unwrap(), CostAlgorithm::Saps);
        assert!("sgd".parse::<CostAlgorithm>().is_err());
    }
}
