//! Paillier cryptosystem with `g = n + 1`, plus simple slot batching.
//!
//! Used as the comparison baseline; not constant time.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use crate::error::{Error, Result};

pub const DEFAULT_KEY_BITS: u32 = 2048;
pub const MILLER_RABIN_ROUNDS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
}

impl PaillierPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn key_bits(&self) -> u64 {
        self.n.bits()
    }

    /// Serialized ciphertext width in bytes.
    pub fn ciphertext_bytes(&self) -> usize {
        self.n_squared.bits().div_ceil(8) as usize
    }

    pub fn encrypt<R: RngCore + CryptoRng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<BigUint> {
        let r = loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        self.encrypt_with_r(m, &r)
    }

    /// `(1 + m n) * r^n mod n^2`.
    pub fn encrypt_with_r(&self, m: &BigUint, r: &BigUint) -> Result<BigUint> {
        if m >= &self.n {
            return Err(Error::PaillierPlaintextRange(format!(
                "plaintext needs {} bits, n has {}",
                m.bits(),
                self.n.bits()
            )));
        }
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        Ok(gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared)
    }

    pub fn hom_add(&self, c1: &BigUint, c2: &BigUint) -> BigUint {
        c1 * c2 % &self.n_squared
    }

    pub fn to_bytes(&self, c: &BigUint) -> Vec<u8> {
        let mut raw = c.to_bytes_be();
        let width = self.ciphertext_bytes();
        if raw.len() < width {
            let mut padded = vec![0u8; width - raw.len()];
            padded.append(&mut raw);
            raw = padded;
        }
        raw
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PaillierKeypair {
    public: PaillierPublicKey,
    lambda: BigUint,
    mu: BigUint,
}

impl std::fmt::Debug for PaillierKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PaillierKeypair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl PaillierKeypair {
    pub fn keygen<R: RngCore + CryptoRng + ?Sized>(bits: u32, rng: &mut R) -> Result<Self> {
        if bits < 64 {
            return Err(Error::InvalidParameter(format!("Paillier modulus of {bits} bits is below 64")));
        }
        let half = bits / 2;
        loop {
            let p = random_prime(half, rng);
            let q = random_prime(bits - half, rng);
            if p == q {
                continue;
            }
            let kp = Self::from_primes(&p, &q)?;
            if kp.public.n.bits() == u64::from(bits) {
                return Ok(kp);
            }
        }
    }

    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self> {
        if p == q {
            return Err(Error::InvalidParameter("Paillier primes must differ".into()));
        }
        let one = BigUint::one();
        let n = p * q;
        let (p1, q1) = (p - &one, q - &one);
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return Err(Error::InvalidParameter("gcd(n, (p-1)(q-1)) != 1".into()));
        }
        let lambda = p1.lcm(&q1);
        let n_squared = &n * &n;
        let mu = mod_inverse(&(&lambda % &n), &n)
            .ok_or_else(|| Error::InvalidParameter("lambda is not invertible mod n".into()))?;
        Ok(Self { public: PaillierPublicKey { n, n_squared }, lambda, mu })
    }

    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &BigUint) -> BigUint {
        let pk = &self.public;
        let u = c.modpow(&self.lambda, &pk.n_squared);
        let l = (u - BigUint::one()) / &pk.n;
        l * &self.mu % &pk.n
    }
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let e = BigInt::from(a.clone()).extended_gcd(&BigInt::from(m.clone()));
    if !e.gcd.is_one() {
        return None;
    }
    let m = BigInt::from(m.clone());
    e.x.mod_floor(&m).to_biguint()
}

const SMALL_PRIMES: [u32; 24] =
    [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];

pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }
    let one = BigUint::one();
    let n1 = n - &one;
    let s = n1.trailing_zeros().unwrap_or(0);
    let d = &n1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Odd prime with exactly `bits` bits and the top two bits set.
pub fn random_prime<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> BigUint {
    assert!(bits >= 8);
    loop {
        let mut c = rng.gen_biguint(u64::from(bits));
        c.set_bit(u64::from(bits) - 1, true);
        c.set_bit(u64::from(bits) - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, MILLER_RABIN_ROUNDS, rng) {
            return c;
        }
    }
}

/// Packing of several small values into one Paillier plaintext.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    pub slot_bits: u32,
    pub guard_bits: u32,
    pub slots: usize,
}

impl BatchLayout {
    /// Widest layout for `key_bits` that tolerates `max_addends` additions.
    pub fn new(key_bits: u32, slot_bits: u32, max_addends: u64) -> Result<Self> {
        if slot_bits == 0 || max_addends == 0 {
            return Err(Error::InvalidParameter("slot width and addend count must be positive".into()));
        }
        let guard_bits = if max_addends <= 1 { 0 } else { 64 - (max_addends - 1).leading_zeros() };
        let stride = slot_bits + guard_bits;
        let budget = key_bits.saturating_sub(1);
        let slots = (budget.saturating_sub(1) / stride) as usize;
        if slots == 0 {
            return Err(Error::InvalidParameter(format!("{stride}-bit slots do not fit a {key_bits}-bit key")));
        }
        Ok(Self { slot_bits, guard_bits, slots })
    }

    pub fn with_guard(slot_bits: u32, guard_bits: u32, slots: usize) -> Self {
        Self { slot_bits, guard_bits, slots }
    }

    pub fn stride(&self) -> u32 {
        self.slot_bits + self.guard_bits
    }

    pub fn plaintexts_for(&self, count: usize) -> usize {
        count.div_ceil(self.slots)
    }
}

/// Packs up to `layout.slots` values, first value in the lowest slot.
pub fn batch_pack(values: &[u64], layout: &BatchLayout) -> Result<BigUint> {
    if values.len() > layout.slots {
        return Err(Error::LengthMismatch { left: layout.slots, right: values.len() });
    }
    let mut acc = BigUint::zero();
    for (i, &v) in values.iter().enumerate().rev() {
        if layout.slot_bits < 64 && v >> layout.slot_bits != 0 {
            return Err(Error::PlaintextOutOfRange { index: i, value: v });
        }
        acc <<= layout.stride();
        acc += v;
    }
    Ok(acc)
}

/// Reads `count` slots, each a full `slot_bits + guard_bits` wide.
pub fn batch_unpack(packed: &BigUint, count: usize, layout: &BatchLayout) -> Vec<u64> {
    let stride = layout.stride();
    let mask = (BigUint::one() << stride) - BigUint::one();
    (0..count)
        .map(|i| {
            let slot: BigUint = (packed >> (stride as usize * i)) & &mask;
            slot.iter_u64_digits().next().unwrap_or(0)
        })
        .collect()
}
