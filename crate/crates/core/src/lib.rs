//! Sparsified single-peer gossip SGD.
//!
//! This crate holds everything that does not touch the operating system:
//! the shared SplitMix64 generator, Bernoulli masks and the sparse wire
//! codec, blossom matching and gossip-matrix generation, the coordinator
//! and worker state machines, desk-scale objectives, and the analysis
//! routines (spectral estimate, contraction measurement, bounds).
//!
//! It is `no_std` and only needs `alloc`. Transports, file formats and the
//! command line live in the `saps` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod coordinator;
pub mod error;
pub mod matching;
pub mod objectives;
pub mod rng;
pub mod sparsify;
pub mod types;
pub mod wire;
pub mod worker;

pub use error::{Error, ProtocolError, Result};
pub use rng::SplitMix64;
pub use types::{
    AdjacencyMatrix, BandwidthMatrix, CompressionConfig, GossipMatrix, Matching, ParameterVector,
    TheoryConstants, TimestampMatrix,
};
