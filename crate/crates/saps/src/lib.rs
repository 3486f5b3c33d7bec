//! Runtime for sparsified single-peer gossip SGD: configuration, bandwidth and
//! dataset loading, simulated and TCP transports, the experiment runner,
//! metrics export, and the verification suite.

pub mod bandwidth;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod runner;
pub mod transport;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{Result, SapsError};
pub use runner::{run_experiment, RunOptions, RunOutput, Summary};
