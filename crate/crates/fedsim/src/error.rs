use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Crypto(#[from] flashe::Error),
    #[error("round {round}: client {client} decrypted {got} at coordinate {coordinate}, plaintext sum is {expected}")]
    OracleMismatch { round: u32, client: u32, coordinate: usize, expected: u64, got: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown site {0:?}")]
    UnknownSite(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
