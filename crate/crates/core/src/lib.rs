//! Additively homomorphic symmetric masking for cross-silo aggregation.
//!
//! A client encrypts a vector of integers by adding AES-derived masks modulo
//! `2^b`. Ciphertexts add coordinate-wise, and a holder of the shared key
//! strips the masks of the participating clients from the sum.
//!
//! ```
//! use flashe::{decrypt, encrypt, hom_sum, Prf, Scheme, SchemeParams, SecretKey};
//!
//! # fn main() -> flashe::Result<()> {
//! let key = SecretKey::generate(&mut rand::rngs::OsRng, SchemeParams::new(32)?);
//! let prf = Prf::new(&key);
//! let a = encrypt(&prf, Scheme::Double, 0, 1, &[5, 7])?;
//! let b = encrypt(&prf, Scheme::Double, 0, 2, &[1, 1])?;
//! let sum = hom_sum([&a, &b])?.unwrap();
//! assert_eq!(decrypt(&prf, Scheme::Double, &sum)?, vec![6, 8]);
//! # Ok(())
//! # }
//! ```

pub mod bitmask;
pub mod cipher;
pub mod codec;
pub mod error;
pub mod paillier;
pub mod planner;
pub mod prf;
pub mod sparse;
pub mod wire;

pub use bitmask::Bitmask;
pub use cipher::{
    boundary_plan, decrypt, decrypt_double, decrypt_single, encrypt, encrypt_double, encrypt_owned, encrypt_single,
    hom_add, hom_sum, BoundaryPlan, Ciphertext, ParticipationRecord, Scheme,
};
pub use codec::{dequantize_sum, fit_clip_threshold, quantize, quantize_slice, ClipConfig, ClipHistory, QuantParams};
pub use error::{Error, Result};
pub use planner::{decide_masking, DropoutScenario, MaskingDecision};
pub use prf::{precompute, CachedMasks, MaskCache, MaskSource, Prf, PrfStats, SchemeParams, SecretKey};
pub use sparse::{CompactCiphertext, LayeredUpdate, Permutation, PermutationSeed, SparseUpdate};
