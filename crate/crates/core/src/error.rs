use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),

    #[error("numerical error on worker {rank} at round {round}: {what}")]
    Numerical {
        rank: usize,
        round: u64,
        what: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("power iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

/// Framing and round-protocol failures. Every variant is distinct so callers
/// can tell corruption from desynchronization.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    BadVersion(u8),

    #[error("unknown message type {0}")]
    UnknownMessageType(u8),

    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("crc mismatch: frame says {expected:#010x}, computed {actual:#010x}")]
    CrcMismatch { expected: u32, actual: u32 },

    #[error("malformed {what} body")]
    Malformed { what: &'static str },

    #[error("frame payload of {0} bytes exceeds limit")]
    FrameTooLarge(usize),

    #[error("expected {expected} message, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },

    #[error("value count mismatch: mask selects {expected}, payload carries {got} (seed desynchronized?)")]
    CountMismatch { expected: usize, got: usize },

    #[error("worker {worker}: round mismatch, expected {expected}, got {got}")]
    RoundMismatch { worker: u32, expected: u64, got: u64 },

    #[error("worker {worker}: duplicate ROUND_END for round {round}")]
    DuplicateAck { worker: u32, round: u64 },

    #[error("unknown worker id {0}")]
    UnknownWorker(u32),

    #[error("payload from worker {got}, expected peer {expected}")]
    WrongSender { expected: u32, got: u32 },

    #[error("no round in progress")]
    NoRoundInProgress,

    #[error("round {0} still in progress")]
    RoundInProgress(u64),
}
