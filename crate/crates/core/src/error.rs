use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported modulus width {0} bits (expected 16, 32 or 64)")]
    InvalidModulus(u32),
    #[error("client index {0} is outside the supported range")]
    InvalidClient(u32),
    #[error("coordinate {0} exceeds the 2^60 index space")]
    CoordinateOutOfRange(u64),
    #[error("plaintext value {value} at coordinate {index} does not fit in the residue ring")]
    PlaintextOutOfRange { index: usize, value: u64 },
    #[error("round mismatch: {left} vs {right}")]
    RoundMismatch { left: u32, right: u32 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("scheme parameters differ between operands")]
    ParamsMismatch,
    #[error("mask cache needs {needed} blocks but capacity is {capacity}")]
    CacheOverflow { needed: u64, capacity: u64 },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported wire version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("malformed participation record: {0}")]
    BadRecord(String),
    #[error("empty survivor set")]
    NoSurvivors,
    #[error("survivor {client} outside 1..={total}")]
    SurvivorOutOfRange { client: u32, total: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("quantized sum {sum} exceeds {contributors} x {levels}")]
    QuantOverflow { sum: u64, contributors: u64, levels: u64 },
    #[error("masks and counts disagree at coordinate {0}")]
    InconsistentMasks(usize),
    #[error("plaintext {0} is not below the Paillier modulus")]
    PaillierPlaintextRange(String),
}
