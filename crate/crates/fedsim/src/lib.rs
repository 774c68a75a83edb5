//! Deterministic simulator of synchronous cross-silo aggregation rounds.
//!
//! Clients produce synthetic updates, optionally sparsify them, quantize,
//! mask, and upload; the server aggregates and every surviving client
//! decrypts. Cryptographic work is timed on the host while network time is
//! derived from a bandwidth matrix.

pub mod config;
pub mod cost;
pub mod error;
pub mod network;
pub mod report;
pub mod sim;

pub use config::{FederationConfig, SchemePolicy, SparsityStep};
pub use cost::{project_cost, CostProjection, Pricing};
pub use error::{Result, SimError};
pub use network::{simulate_comm, BandwidthMatrix};
pub use report::{CacheState, RoundOutcome, RoundReport};
pub use sim::Federation;
