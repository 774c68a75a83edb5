//! Library side of the `flashe` command: benchmarks and verification suites.

pub mod bench;
pub mod verify;

use thiserror::Error;

pub const SEED_ENV: &str = "FLASHE_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Crypto(#[from] flashe::Error),
    #[error(transparent)]
    Sim(#[from] flashe_fedsim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad invocations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// An explicit seed wins, then `FLASHE_SEED`, then 0.
pub fn resolve_seed(explicit: Option<u64>, env: Option<&str>) -> Result<u64, CliError> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match env {
        None => Ok(0),
        Some(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={raw:?} is not an unsigned 64-bit integer"))),
    }
}
