//! Message fabrics: a deterministic in-process network and real TCP.

pub mod sim;
pub mod tcp;

pub use sim::{round_time, Endpoint, SimNetwork};
