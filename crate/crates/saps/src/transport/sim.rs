//! Deterministic in-process network. Frames are encoded and decoded exactly as
//! on the wire; worker↔worker transfers cost `bytes / B_ij` virtual seconds.

use std::collections::VecDeque;

use saps_core::wire::{self, Message, MessageType};
use saps_core::{BandwidthMatrix, Matching, ProtocolError};

use crate::error::{Result, SapsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Coordinator,
    Worker(usize),
}

fn config_error(msg: String) -> SapsError {
    SapsError::Core(saps_core::Error::Config(msg))
}

/// Byte and frame counters for one endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
}

#[derive(Clone, Debug)]
pub struct SimNetwork {
    bandwidth: BandwidthMatrix,
    /// Per destination: `(source, frame)` in send order.
    inboxes: Vec<VecDeque<(Endpoint, Vec<u8>)>>,
    traffic: Vec<Traffic>,
    /// Per-worker MODEL_VALUES traffic only.
    values_traffic: Vec<Traffic>,
    clock: f64,
    round_busy: f64,
}

impl SimNetwork {
    pub fn new(bandwidth: BandwidthMatrix) -> Self {
        let n = bandwidth.n();
        Self {
            bandwidth,
            inboxes: vec![VecDeque::new(); n + 1],
            traffic: vec![Traffic::default(); n + 1],
            values_traffic: vec![Traffic::default(); n],
            clock: 0.0,
            round_busy: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.bandwidth.n()
    }

    fn slot(&self, e: Endpoint) -> Result<usize> {
        match e {
            Endpoint::Coordinator => Ok(self.n()),
            Endpoint::Worker(w) if w < self.n() => Ok(w),
            Endpoint::Worker(w) => Err(ProtocolError::UnknownWorker(w as u32).into()),
        }
    }

    /// Queues `msg` and returns its virtual transfer time. Control links to the
    /// coordinator are not part of `B` and cost nothing.
    pub fn send(&mut self, from: Endpoint, to: Endpoint, msg: &Message) -> Result<f64> {
        let (src, dst) = (self.slot(from)?, self.slot(to)?);
        let frame = wire::encode(msg);
        let len = frame.len() as u64;
        let seconds = match (from, to) {
            (Endpoint::Worker(i), Endpoint::Worker(j)) => {
                let b = self.bandwidth.get(i, j);
                if b <= 0.0 {
                    return Err(config_error(format!("no bandwidth between workers {i} and {j}")));
                }
                len as f64 / b
            }
            _ => 0.0,
        };
        if msg.message_type() == MessageType::ModelValues {
            if let Endpoint::Worker(i) = from {
                self.values_traffic[i].frames_sent += 1;
                self.values_traffic[i].bytes_sent += len;
            }
            if let Endpoint::Worker(j) = to {
                self.values_traffic[j].frames_received += 1;
                self.values_traffic[j].bytes_received += len;
            }
        }
        self.traffic[src].frames_sent += 1;
        self.traffic[src].bytes_sent += len;
        self.traffic[dst].frames_received += 1;
        self.traffic[dst].bytes_received += len;
        self.round_busy = self.round_busy.max(seconds);
        self.inboxes[dst].push_back((from, frame));
        Ok(seconds)
    }

    /// Oldest frame at `to` from `from`, which must be of type `expected`.
    pub fn receive(&mut self, to: Endpoint, from: Endpoint, expected: MessageType) -> Result<Message> {
        let dst = self.slot(to)?;
        let pos = self.inboxes[dst]
            .iter()
            .position(|(src, _)| *src == from)
            .ok_or(ProtocolError::UnexpectedMessage {
                expected: expected.name(),
                got: "nothing",
            })?;
        let (_, frame) = self.inboxes[dst].remove(pos).expect("position is in range");
        let msg = wire::decode(&frame)?;
        if msg.message_type() != expected {
            return Err(ProtocolError::UnexpectedMessage {
                expected: expected.name(),
                got: msg.name(),
            }
            .into());
        }
        Ok(msg)
    }

    /// Raw frame variant of [`receive`](Self::receive), for consumers that decode themselves.
    pub fn receive_frame(&mut self, to: Endpoint, from: Endpoint) -> Result<Vec<u8>> {
        let dst = self.slot(to)?;
        let pos = self.inboxes[dst]
            .iter()
            .position(|(src, _)| *src == from)
            .ok_or(SapsError::Transport(format!("no frame from {from:?} waiting at {to:?}")))?;
        Ok(self.inboxes[dst].remove(pos).expect("position is in range").1)
    }

    pub fn pending(&self) -> usize {
        self.inboxes.iter().map(VecDeque::len).sum()
    }

    /// Closes the synchronous round: the clock advances by its slowest transfer.
    pub fn end_round(&mut self) -> f64 {
        let t = self.round_busy;
        self.clock += t;
        self.round_busy = 0.0;
        t
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn traffic(&self, e: Endpoint) -> Traffic {
        self.slot(e).map(|s| self.traffic[s]).unwrap_or_default()
    }

    pub fn values_traffic(&self, worker: usize) -> Traffic {
        self.values_traffic[worker]
    }
}

/// Duration of a synchronous round: the slowest matched pair moving `payload_bytes`.
pub fn round_time(matching: &Matching, payload_bytes: usize, b: &BandwidthMatrix) -> Result<f64> {
    let mut slowest = f64::INFINITY;
    for (i, j) in matching.pairs() {
        let s = b.get(i, j);
        if s <= 0.0 {
            return Err(config_error(format!("matched pair ({i}, {j}) has zero bandwidth")));
        }
        slowest = slowest.min(s);
    }
    if slowest.is_infinite() {
        return Ok(0.0);
    }
    Ok(payload_bytes as f64 / slowest)
}
