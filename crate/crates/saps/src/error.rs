use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = SapsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SapsError {
    #[error(transparent)]
    Core(#[from] saps_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid config: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("timed out after {0:?} waiting for {1}")]
    Timeout(Duration, String),
}

impl From<saps_core::ProtocolError> for SapsError {
    fn from(e: saps_core::ProtocolError) -> Self {
        SapsError::Core(e.into())
    }
}

impl SapsError {
    /// Whether the input was at fault (as opposed to a runtime failure).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SapsError::Json(_)
                | SapsError::Core(saps_core::Error::Validation(_))
                | SapsError::Core(saps_core::Error::Config(_))
                | SapsError::Core(saps_core::Error::Domain(_))
        )
    }
}
