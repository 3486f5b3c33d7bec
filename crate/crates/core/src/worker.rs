//! One worker's round: local SGD step, shared-seed mask, masked exchange
//! with the assigned peer, merge, acknowledgment.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, ProtocolError, Result};
use crate::objectives::Objective;
use crate::rng::{derive_seed, SplitMix64};
use crate::sparsify::{extract_payload, generate_mask, merge_masked_in_place, MaskStream, SparsePayload};
use crate::types::ParameterVector;
use crate::wire::{RoundEnd, RoundStart};

#[derive(Clone)]
pub struct WorkerState {
    rank: usize,
    x: ParameterVector,
    gamma: f64,
    ratio: u32,
    batch_size: usize,
    objective: Arc<dyn Objective>,
    rng: SplitMix64,
    grad: Vec<f64>,
    batch: Vec<usize>,
    round: u64,
}

impl core::fmt::Debug for WorkerState {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("WorkerState")
            .field("rank", &self.rank)
            .field("round", &self.round)
            .field("gamma", &self.gamma)
            .field("ratio", &self.ratio)
            .finish_non_exhaustive()
    }
}

impl WorkerState {
    /// The minibatch stream is derived from `master_seed` and `rank`, so runs
    /// replay exactly whatever transport carries them.
    pub fn new(
        rank: usize,
        x0: ParameterVector,
        gamma: f64,
        ratio: u32,
        batch_size: usize,
        objective: Arc<dyn Objective>,
        master_seed: u64,
    ) -> Result<Self> {
        if x0.len() != objective.dim() {
            return Err(Error::validation(alloc::format!(
                "initial model has {} entries, objective expects {}",
                x0.len(),
                objective.dim()
            )));
        }
        if !x0.is_finite() {
            return Err(Error::validation("initial model must be finite"));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::validation("learning rate must be finite and >= 0"));
        }
        if ratio == 0 {
            return Err(Error::validation("compression ratio c must be >= 1"));
        }
        if batch_size == 0 {
            return Err(Error::validation("batch size must be >= 1"));
        }
        if objective.num_samples() == 0 {
            return Err(Error::validation(alloc::format!("worker {rank} has an empty data shard")));
        }
        let dim = x0.len();
        Ok(Self {
            rank,
            x: x0,
            gamma,
            ratio,
            batch_size,
            objective,
            rng: SplitMix64::new(derive_seed(master_seed, rank as u64 + 1)),
            grad: vec![0.0; dim],
            batch: Vec::with_capacity(batch_size),
            round: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn model(&self) -> &ParameterVector {
        &self.x
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    fn numerical(&self, what: &'static str) -> Error {
        Error::Numerical {
            rank: self.rank,
            round: self.round,
            what,
        }
    }

    /// `x ← x − γ·g` on a fresh minibatch; returns the minibatch loss.
    /// The whole shard is used when it fits in one batch.
    pub fn local_sgd_step(&mut self) -> Result<f64> {
        let m = self.objective.num_samples();
        self.batch.clear();
        if self.batch_size >= m {
            self.batch.extend(0..m);
        } else {
            for _ in 0..self.batch_size {
                self.batch.push(self.rng.index(m));
            }
        }
        let loss = self.objective.loss_grad(&self.x, &self.batch, &mut self.grad);
        if !loss.is_finite() {
            return Err(self.numerical("non-finite loss"));
        }
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(self.numerical("non-finite gradient"));
        }
        for (xj, gj) in self.x.iter_mut().zip(&self.grad) {
            *xj -= self.gamma * gj;
        }
        if !self.x.is_finite() {
            return Err(self.numerical("model diverged"));
        }
        Ok(loss)
    }

    /// SGD step plus this round's mask and outgoing payload.
    pub fn prepare_round(&mut self, start: &RoundStart) -> Result<PreparedRound> {
        if start.round != self.round {
            return Err(ProtocolError::RoundMismatch {
                worker: self.rank as u32,
                expected: self.round,
                got: start.round,
            }
            .into());
        }
        let peer = start.peer();
        if peer == Some(self.rank) {
            return Err(Error::validation("worker assigned to itself"));
        }
        let loss = self.local_sgd_step()?;
        let mask = generate_mask(start.seed, self.ratio, self.x.len())?;
        let payload = match peer {
            Some(_) => Some(extract_payload(&self.x, &mask, start.round, self.rank as u32)?),
            None => None,
        };
        Ok(PreparedRound {
            round: start.round,
            peer,
            mask,
            payload,
            loss,
        })
    }

    /// Merges the peer's values (if any) and closes the round.
    pub fn finish_round(&mut self, prepared: PreparedRound, incoming: Option<SparsePayload>) -> Result<RoundEnd> {
        match (prepared.peer, incoming) {
            (Some(peer), Some(p)) => {
                if p.round != prepared.round {
                    return Err(ProtocolError::RoundMismatch {
                        worker: p.sender,
                        expected: prepared.round,
                        got: p.round,
                    }
                    .into());
                }
                if p.sender as usize != peer {
                    return Err(ProtocolError::WrongSender {
                        expected: peer as u32,
                        got: p.sender,
                    }
                    .into());
                }
                merge_masked_in_place(&mut self.x, &prepared.mask, &p)?;
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "MODEL_VALUES",
                    got: "nothing",
                }
                .into())
            }
            (None, Some(_)) => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "nothing",
                    got: "MODEL_VALUES",
                }
                .into())
            }
        }
        self.round += 1;
        Ok(RoundEnd {
            round: prepared.round,
            worker_id: self.rank as u32,
            local_loss: prepared.loss,
        })
    }
}

/// Per-round scratch carried between the SGD step and the merge.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRound {
    pub round: u64,
    pub peer: Option<usize>,
    pub mask: MaskStream,
    /// What to send; `None` on a self-loop round.
    pub payload: Option<SparsePayload>,
    pub loss: f64,
}

/// Carries one payload each way between two matched workers.
pub trait PeerLink {
    fn exchange(&mut self, peer: usize, outgoing: &SparsePayload) -> Result<SparsePayload>;
}

pub fn run_worker_round(state: &mut WorkerState, start: &RoundStart, link: &mut dyn PeerLink) -> Result<RoundEnd> {
    let prepared = state.prepare_round(start)?;
    let incoming = match (prepared.peer, &prepared.payload) {
        (Some(peer), Some(out)) => Some(link.exchange(peer, out)?),
        _ => None,
    };
    state.finish_round(prepared, incoming)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Quadratic, QuadraticProblem};
    use crate::wire::NO_PEER;

    fn worker(rank: usize, x: f64, target: f64, gamma: f64, ratio: u32) -> WorkerState {
        WorkerState::new(
            rank,
            ParameterVector::from(vec![x]),
            gamma,
            ratio,
            1,
            Arc::new(Quadratic::new(vec![target])),
            0,
        )
        .unwrap()
    }

    fn start(round: u64, seed: u64, peer: Option<usize>) -> RoundStart {
        RoundStart {
            round,
            seed,
            peer_id: peer.map_or(NO_PEER, |p| p as u32),
            flags: 0,
        }
    }

    /// Exchange against a payload computed ahead of time.
    struct Canned(Option<SparsePayload>);

    impl PeerLink for Canned {
        fn exchange(&mut self, _peer: usize, _out: &SparsePayload) -> Result<SparsePayload> {
            Ok(self.0.take().expect("one exchange per round"))
        }
    }

    #[test]
    fn sgd_closed_form() {
        let mut w = worker(0, 1.0, 0.0, 0.5, 1);
        w.local_sgd_step().unwrap();
        assert_eq!(&**w.model(), &[0.5]);
        let mut w = worker(0, 3.0, 3.0, 0.5, 1);
        w.local_sgd_step().unwrap();
        assert_eq!(&**w.model(), &[3.0]);
    }

    #[test]
    fn pure_averaging_pair() {
        let mut a = worker(0, 0.0, 0.0, 0.0, 1);
        let mut b = worker(1, 2.0, 0.0, 0.0, 1);
        let pa = a.prepare_round(&start(0, 9, Some(1))).unwrap();
        let pb = b.prepare_round(&start(0, 9, Some(0))).unwrap();
        let (oa, ob) = (pa.payload.clone(), pb.payload.clone());
        let ea = a.finish_round(pa, ob).unwrap();
        b.finish_round(pb, oa).unwrap();
        assert_eq!(&**a.model(), &[1.0]);
        assert_eq!(&**b.model(), &[1.0]);
        assert_eq!(ea.round, 0);
        assert_eq!(a.round(), 1);
    }

    #[test]
    fn self_loop_only_takes_the_sgd_step() {
        let mut w = worker(0, 1.0, 0.0, 0.5, 1);
        let end = run_worker_round(&mut w, &start(0, 1, None), &mut Canned(None)).unwrap();
        assert_eq!(&**w.model(), &[0.5]);
        assert_eq!(end.local_loss, 0.5);
    }

    #[test]
    fn peer_errors() {
        let mut w = worker(0, 1.0, 0.0, 0.0, 1);
        assert!(matches!(
            w.prepare_round(&start(3, 1, Some(1))),
            Err(Error::Protocol(ProtocolError::RoundMismatch { .. }))
        ));
        let p = w.prepare_round(&start(0, 1, Some(1))).unwrap();
        let wrong_count = SparsePayload {
            round: 0,
            sender: 1,
            values: vec![1.0, 2.0],
        };
        assert!(matches!(
            w.clone().finish_round(p.clone(), Some(wrong_count)),
            Err(Error::Protocol(ProtocolError::CountMismatch { .. }))
        ));
        let wrong_round = SparsePayload {
            round: 1,
            sender: 1,
            values: vec![1.0],
        };
        assert!(matches!(
            w.clone().finish_round(p.clone(), Some(wrong_round)),
            Err(Error::Protocol(ProtocolError::RoundMismatch { .. }))
        ));
        let wrong_sender = SparsePayload {
            round: 0,
            sender: 2,
            values: vec![1.0],
        };
        assert!(matches!(
            w.finish_round(p, Some(wrong_sender)),
            Err(Error::Protocol(ProtocolError::WrongSender { .. }))
        ));
    }

    #[test]
    fn divergence_is_reported_with_rank_and_round() {
        let mut w = worker(3, 1e300, 0.0, 1e10, 1);
        assert!(matches!(
            w.local_sgd_step(),
            Err(Error::Numerical { rank: 3, round: 0, .. })
        ));
    }

    #[test]
    fn rejects_bad_construction() {
        let q: Arc<dyn Objective> = Arc::new(Quadratic::new(vec![0.0, 0.0]));
        assert!(WorkerState::new(0, ParameterVector::zeros(1), 0.1, 1, 1, q.clone(), 0).is_err());
        assert!(WorkerState::new(0, ParameterVector::zeros(2), -0.1, 1, 1, q.clone(), 0).is_err());
        assert!(WorkerState::new(0, ParameterVector::zeros(2), 0.1, 0, 1, q, 0).is_err());
    }

    #[test]
    fn pair_sum_conserved_with_zero_step() {
        let p = QuadraticProblem::from_targets(vec![vec![0.0; 50]; 2]).unwrap();
        let objs = p.objectives();
        let x0: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let x1: Vec<f64> = (0..50).map(|i| -(i as f64) * 0.5).collect();
        let mut a = WorkerState::new(0, x0.clone().into(), 0.0, 3, 1, objs[0].clone(), 1).unwrap();
        let mut b = WorkerState::new(1, x1.clone().into(), 0.0, 3, 1, objs[1].clone(), 1).unwrap();
        for t in 0..20 {
            let pa = a.prepare_round(&start(t, 100 + t, Some(1))).unwrap();
            let pb = b.prepare_round(&start(t, 100 + t, Some(0))).unwrap();
            let (oa, ob) = (pa.payload.clone(), pb.payload.clone());
            a.finish_round(pa, ob).unwrap();
            b.finish_round(pb, oa).unwrap();
        }
        for j in 0..50 {
            assert!((a.model()[j] + b.model()[j] - (x0[j] + x1[j])).abs() < 1e-12);
        }
    }
}
