//! Keyed mask generation.
//!
//! Every mask is a lane of an AES-256 block evaluated at a fixed 16-byte
//! input `round (u32 BE) || client (u32 BE) || block (u64 BE)`. A block holds
//! `128 / b` residues of `b` bits; lane 0 is the most significant slice.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes256;
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cipher::Scheme;
use crate::error::{Error, Result};

pub const KEY_BYTES: usize = 32;

/// Exclusive upper bound on coordinate indices.
pub const COORDINATE_LIMIT: u64 = 1 << 60;

const PAR_BLOCKS: usize = 8;
const ACCUMULATE_CHUNK: usize = 2048;
const FILL_BATCH: usize = 64;

/// Residue ring `Z_{2^b}` and the matching lane layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SchemeParams {
    modulus_bits: u32,
}

impl SchemeParams {
    pub fn new(modulus_bits: u32) -> Result<Self> {
        match modulus_bits {
            16 | 32 | 64 => Ok(Self { modulus_bits }),
            other => Err(Error::InvalidModulus(other)),
        }
    }

    pub const fn modulus_bits(self) -> u32 {
        self.modulus_bits
    }

    pub const fn lanes_per_block(self) -> usize {
        (128 / self.modulus_bits) as usize
    }

    pub const fn residue_bytes(self) -> usize {
        (self.modulus_bits / 8) as usize
    }

    /// All-ones mask of the residue width.
    pub const fn residue_mask(self) -> u64 {
        if self.modulus_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.modulus_bits) - 1
        }
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.residue_mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.residue_mask()
    }

    /// Signed integer coefficient as a ring element.
    #[inline]
    pub fn coefficient(self, c: i64) -> u64 {
        (c as u64) & self.residue_mask()
    }

    #[inline]
    pub fn contains(self, v: u64) -> bool {
        v & !self.residue_mask() == 0
    }

    /// Lane `lane` of a block, counted from the most significant end.
    #[inline]
    pub fn lane(self, block: u128, lane: usize) -> u64 {
        let shift = 128 - self.modulus_bits as usize * (lane + 1);
        ((block >> shift) as u64) & self.residue_mask()
    }
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self { modulus_bits: 32 }
    }
}

impl TryFrom<u32> for SchemeParams {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<SchemeParams> for u32 {
    fn from(p: SchemeParams) -> u32 {
        p.modulus_bits
    }
}

/// Shared symmetric key. Deliberately neither `Serialize` nor printable.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    bytes: [u8; KEY_BYTES],
    params: SchemeParams,
}

impl SecretKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, params: SchemeParams) -> Self {
        let mut bytes = [0u8; KEY_BYTES];
        rng.fill_bytes(&mut bytes);
        Self { bytes, params }
    }

    pub fn from_bytes(bytes: [u8; KEY_BYTES], params: SchemeParams) -> Self {
        Self { bytes, params }
    }

    pub fn params(&self) -> SchemeParams {
        self.params
    }

    pub fn expose_bytes(&self) -> &[u8; KEY_BYTES] {
        &self.bytes
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey").field("bytes", &"<redacted>").field("params", &self.params).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrfIndex {
    pub round: u32,
    pub client: u32,
    pub coordinate: u64,
}

impl PrfIndex {
    pub fn new(round: u32, client: u32, coordinate: u64) -> Result<Self> {
        if coordinate >= COORDINATE_LIMIT {
            return Err(Error::CoordinateOutOfRange(coordinate));
        }
        Ok(Self { round, client, coordinate })
    }
}

/// The 16-byte block-cipher input for `(round, client, block)`.
pub fn prf_input(round: u32, client: u32, block: u64) -> [u8; 16] {
    let mut input = [0u8; 16];
    input[..4].copy_from_slice(&round.to_be_bytes());
    input[4..8].copy_from_slice(&client.to_be_bytes());
    input[8..].copy_from_slice(&block.to_be_bytes());
    input
}

/// Counter snapshot of work done by a [`Prf`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfStats {
    /// Block-cipher invocations.
    pub block_calls: u64,
    /// Individual residues handed out.
    pub lane_evals: u64,
}

impl std::ops::Sub for PrfStats {
    type Output = PrfStats;

    fn sub(self, rhs: PrfStats) -> PrfStats {
        PrfStats { block_calls: self.block_calls - rhs.block_calls, lane_evals: self.lane_evals - rhs.lane_evals }
    }
}

/// Source of masks `F_k(round || client || coordinate)`.
///
/// Implemented by the direct [`Prf`], by [`CachedMasks`] and by test stubs.
pub trait MaskSource {
    fn params(&self) -> SchemeParams;

    /// Writes masks for coordinates `d_lo .. d_lo + out.len()` into `out`.
    fn fill(&self, round: u32, client: u32, d_lo: u64, out: &mut [u64]);

    /// Masks at the given ascending coordinates, one per entry of `out`.
    fn gather(&self, round: u32, client: u32, coords: &[u64], out: &mut [u64]) {
        debug_assert_eq!(coords.len(), out.len());
        for (o, &d) in out.iter_mut().zip(coords) {
            let mut one = [0u64];
            self.fill(round, client, d, &mut one);
            *o = one[0];
        }
    }

    /// `acc[t] += coeff * F(round, client, d_lo + t)` in the ring.
    fn accumulate(&self, round: u32, client: u32, d_lo: u64, coeff: i64, acc: &mut [u64]) {
        let mut scratch = vec![0u64; acc.len()];
        self.fill(round, client, d_lo, &mut scratch);
        accumulate_into(self.params(), coeff, &scratch, acc);
    }

    /// `acc[t] += coeff * F(round, client, coords[t])` in the ring.
    fn gather_accumulate(&self, round: u32, client: u32, coords: &[u64], coeff: i64, acc: &mut [u64]) {
        let mut scratch = vec![0u64; acc.len()];
        self.gather(round, client, coords, &mut scratch);
        accumulate_into(self.params(), coeff, &scratch, acc);
    }

    /// Adds `F(client)` to `buf`, and subtracts `F(client + 1)` under double masking.
    fn mask_in_place(&self, scheme: Scheme, round: u32, client: u32, buf: &mut [u64]) {
        self.accumulate(round, client, 0, 1, buf);
        if scheme == Scheme::Double {
            self.accumulate(round, client + 1, 0, -1, buf);
        }
    }
}

/// Splits one cipher output into big-endian lanes, most significant first.
#[inline]
fn decode_lanes(params: SchemeParams, bytes: &[u8], out: &mut [u64]) {
    match params.residue_bytes() {
        2 => out.iter_mut().zip(bytes.chunks_exact(2)).for_each(|(o, c)| *o = u16::from_be_bytes([c[0], c[1]]) as u64),
        4 => out
            .iter_mut()
            .zip(bytes.chunks_exact(4))
            .for_each(|(o, c)| *o = u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as u64),
        _ => {
            out.iter_mut().zip(bytes.chunks_exact(8)).for_each(|(o, c)| *o = u64::from_be_bytes(c.try_into().unwrap()))
        }
    }
}

#[inline]
pub(crate) fn accumulate_into(params: SchemeParams, coeff: i64, masks: &[u64], acc: &mut [u64]) {
    let mask = params.residue_mask();
    match coeff {
        1 => acc.iter_mut().zip(masks).for_each(|(a, &m)| *a = a.wrapping_add(m) & mask),
        -1 => acc.iter_mut().zip(masks).for_each(|(a, &m)| *a = a.wrapping_sub(m) & mask),
        c => {
            let c = params.coefficient(c);
            acc.iter_mut().zip(masks).for_each(|(a, &m)| *a = a.wrapping_add(m.wrapping_mul(c)) & mask)
        }
    }
}

/// AES-256 keyed pseudorandom function with instrumentation counters.
pub struct Prf {
    cipher: Aes256,
    params: SchemeParams,
    block_calls: AtomicU64,
    lane_evals: AtomicU64,
}

impl fmt::Debug for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Prf").field("params", &self.params).field("stats", &self.stats()).finish_non_exhaustive()
    }
}

impl Prf {
    pub fn new(key: &SecretKey) -> Self {
        Self {
            cipher: Aes256::new(GenericArray::from_slice(&key.bytes)),
            params: key.params,
            block_calls: AtomicU64::new(0),
            lane_evals: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> PrfStats {
        PrfStats {
            block_calls: self.block_calls.load(Ordering::Relaxed),
            lane_evals: self.lane_evals.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.block_calls.store(0, Ordering::Relaxed);
        self.lane_evals.store(0, Ordering::Relaxed);
    }

    fn record(&self, blocks: u64, lanes: u64) {
        self.block_calls.fetch_add(blocks, Ordering::Relaxed);
        self.lane_evals.fetch_add(lanes, Ordering::Relaxed);
    }

    /// One raw 128-bit PRF output.
    pub fn block(&self, round: u32, client: u32, block: u64) -> u128 {
        let mut b = GenericArray::from(prf_input(round, client, block));
        self.cipher.encrypt_block(&mut b);
        self.record(1, 0);
        u128::from_be_bytes(b.into())
    }

    pub fn eval(&self, idx: PrfIndex) -> u64 {
        let lanes = self.params.lanes_per_block() as u64;
        let word = self.block(idx.round, idx.client, idx.coordinate / lanes);
        self.lane_evals.fetch_add(1, Ordering::Relaxed);
        self.params.lane(word, (idx.coordinate % lanes) as usize)
    }

    /// Masks for coordinates `d_lo..d_hi`, one block-cipher call per block.
    pub fn mask_stream(&self, round: u32, client: u32, d_lo: u64, d_hi: u64) -> Vec<u64> {
        assert!(d_lo <= d_hi, "mask_stream: d_lo > d_hi");
        let mut out = vec![0u64; (d_hi - d_lo) as usize];
        self.fill(round, client, d_lo, &mut out);
        out
    }

    /// Evaluates consecutive blocks starting at `first`, calling `sink` with
    /// each `(block_index, output)` in order.
    fn blocks_from(&self, round: u32, client: u32, first: u64, count: u64, mut sink: impl FnMut(u64, u128)) {
        let mut buf = [GenericArray::default(); PAR_BLOCKS];
        let mut b = first;
        let end = first + count;
        while b < end {
            let n = (end - b).min(PAR_BLOCKS as u64) as usize;
            for (k, slot) in buf[..n].iter_mut().enumerate() {
                *slot = GenericArray::from(prf_input(round, client, b + k as u64));
            }
            self.cipher.encrypt_blocks(&mut buf[..n]);
            for (k, slot) in buf[..n].iter().enumerate() {
                let bytes: [u8; 16] = (*slot).into();
                sink(b + k as u64, u128::from_be_bytes(bytes));
            }
            b += n as u64;
        }
        self.block_calls.fetch_add(count, Ordering::Relaxed);
    }
}

impl MaskSource for Prf {
    fn params(&self) -> SchemeParams {
        self.params
    }

    fn fill(&self, round: u32, client: u32, d_lo: u64, out: &mut [u64]) {
        if out.is_empty() {
            return;
        }
        let params = self.params;
        let lanes = params.lanes_per_block();
        debug_assert!(d_lo + out.len() as u64 <= COORDINATE_LIMIT);
        let mut blk = d_lo / lanes as u64;
        let mut rest = &mut out[..];
        let skip = (d_lo % lanes as u64) as usize;
        if skip != 0 {
            let word = self.block(round, client, blk);
            let take = (lanes - skip).min(rest.len());
            for (k, o) in rest[..take].iter_mut().enumerate() {
                *o = params.lane(word, skip + k);
            }
            rest = &mut rest[take..];
            blk += 1;
        }
        let full = rest.len() / lanes;
        let (body, tail) = rest.split_at_mut(full * lanes);
        let mut input = GenericArray::from(prf_input(round, client, 0));
        let mut buf = [GenericArray::default(); FILL_BATCH];
        for chunk in body.chunks_mut(FILL_BATCH * lanes) {
            let n = chunk.len() / lanes;
            for slot in buf[..n].iter_mut() {
                input[8..].copy_from_slice(&blk.to_be_bytes());
                *slot = input;
                blk += 1;
            }
            self.cipher.encrypt_blocks(&mut buf[..n]);
            for (slot, o) in buf[..n].iter().zip(chunk.chunks_exact_mut(lanes)) {
                decode_lanes(params, slot.as_slice(), o);
            }
        }
        self.block_calls.fetch_add(full as u64, Ordering::Relaxed);
        if !tail.is_empty() {
            let word = self.block(round, client, blk);
            for (k, o) in tail.iter_mut().enumerate() {
                *o = params.lane(word, k);
            }
        }
        self.lane_evals.fetch_add(out.len() as u64, Ordering::Relaxed);
    }

    fn accumulate(&self, round: u32, client: u32, d_lo: u64, coeff: i64, acc: &mut [u64]) {
        let mut scratch = [0u64; ACCUMULATE_CHUNK];
        let mut start = 0usize;
        for chunk in acc.chunks_mut(ACCUMULATE_CHUNK) {
            let masks = &mut scratch[..chunk.len()];
            self.fill(round, client, d_lo + start as u64, masks);
            accumulate_into(self.params, coeff, masks, chunk);
            start += chunk.len();
        }
    }

    fn gather(&self, round: u32, client: u32, coords: &[u64], out: &mut [u64]) {
        debug_assert_eq!(coords.len(), out.len());
        let params = self.params;
        let lanes = params.lanes_per_block() as u64;
        let mut t = 0usize;
        // Runs of adjacent blocks are batched through the pipelined cipher.
        while t < coords.len() {
            let first = coords[t] / lanes;
            let mut last = first;
            let mut u = t;
            while u < coords.len() && coords[u] / lanes <= last + 1 && coords[u] / lanes - first < 64 {
                last = coords[u] / lanes;
                u += 1;
            }
            let mut words = [0u128; 64];
            self.blocks_from(round, client, first, last - first + 1, |blk, w| {
                words[(blk - first) as usize] = w;
            });
            for k in t..u {
                let d = coords[k];
                out[k] = params.lane(words[(d / lanes - first) as usize], (d % lanes) as usize);
            }
            t = u;
        }
        self.lane_evals.fetch_add(coords.len() as u64, Ordering::Relaxed);
    }
}

/// `F_k` evaluated on a single block; builds a throwaway cipher instance.
pub fn prf_block(key: &SecretKey, round: u32, client: u32, block: u64) -> u128 {
    Prf::new(key).block(round, client, block)
}

pub fn prf_eval(key: &SecretKey, idx: PrfIndex) -> u64 {
    Prf::new(key).eval(idx)
}

pub fn mask_stream(key: &SecretKey, round: u32, client: u32, d_lo: u64, d_hi: u64) -> Vec<u64> {
    Prf::new(key).mask_stream(round, client, d_lo, d_hi)
}

/// Masks precomputed for one round, stored as decoded lanes per client.
///
/// Lanes for client `j` cover coordinates `0..num_coords` rounded up to a
/// whole number of blocks, so `lanes[j][blk * L + l]` is lane `l` of block `blk`.
#[derive(Clone, Debug)]
pub struct MaskCache {
    round: u32,
    params: SchemeParams,
    num_coords: u64,
    capacity_blocks: u64,
    entries: HashMap<u32, Vec<u64>>,
}

impl MaskCache {
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn params(&self) -> SchemeParams {
        self.params
    }

    pub fn num_coords(&self) -> u64 {
        self.num_coords
    }

    pub fn capacity_blocks(&self) -> u64 {
        self.capacity_blocks
    }

    pub fn blocks_per_client(&self) -> u64 {
        self.num_coords.div_ceil(self.params.lanes_per_block() as u64)
    }

    pub fn blocks_used(&self) -> u64 {
        self.entries.len() as u64 * self.blocks_per_client()
    }

    pub fn clients(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains_client(&self, client: u32) -> bool {
        self.entries.contains_key(&client)
    }

    pub fn lanes(&self, client: u32) -> Option<&[u64]> {
        self.entries.get(&client).map(Vec::as_slice)
    }

    /// Reassembles the cached 128-bit output of `(client, block)`.
    pub fn block(&self, client: u32, block: u64) -> Option<u128> {
        let lanes = self.params.lanes_per_block();
        let start = block as usize * lanes;
        let slice = self.entries.get(&client)?.get(start..start + lanes)?;
        let bits = self.params.modulus_bits();
        Some(slice.iter().fold(0u128, |acc, &l| (acc << bits) | l as u128))
    }

    fn covers(&self, round: u32, client: u32, d_hi: u64) -> Option<&[u64]> {
        if round != self.round || d_hi > self.num_coords {
            return None;
        }
        self.lanes(client)
    }
}

/// Precomputes every block needed to encrypt or decrypt `num_coords`
/// coordinates for the listed clients in `round`.
pub fn precompute(
    prf: &Prf,
    round: u32,
    clients: impl IntoIterator<Item = u32>,
    num_coords: u64,
    capacity_blocks: u64,
) -> Result<MaskCache> {
    if num_coords == 0 {
        return Err(Error::InvalidParameter("precompute requires num_coords > 0".into()));
    }
    if num_coords > COORDINATE_LIMIT {
        return Err(Error::CoordinateOutOfRange(num_coords));
    }
    let mut clients: Vec<u32> = clients.into_iter().collect();
    clients.sort_unstable();
    clients.dedup();
    let params = prf.params;
    let per_client = num_coords.div_ceil(params.lanes_per_block() as u64);
    let needed = per_client.saturating_mul(clients.len() as u64);
    if needed > capacity_blocks {
        return Err(Error::CacheOverflow { needed, capacity: capacity_blocks });
    }
    let padded = (per_client as usize) * params.lanes_per_block();
    let entries = clients
        .par_iter()
        .map(|&client| {
            let mut lanes = vec![0u64; padded];
            prf.fill(round, client, 0, &mut lanes);
            (client, lanes)
        })
        .collect();
    Ok(MaskCache { round, params, num_coords, capacity_blocks, entries })
}

/// Cache-first mask source; misses fall through to direct evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CachedMasks<'a> {
    cache: &'a MaskCache,
    fallback: &'a Prf,
}

impl<'a> CachedMasks<'a> {
    pub fn new(cache: &'a MaskCache, fallback: &'a Prf) -> Self {
        assert_eq!(cache.params, fallback.params, "cache and PRF disagree on scheme parameters");
        Self { cache, fallback }
    }
}

impl MaskSource for CachedMasks<'_> {
    fn params(&self) -> SchemeParams {
        self.cache.params
    }

    fn fill(&self, round: u32, client: u32, d_lo: u64, out: &mut [u64]) {
        match self.cache.covers(round, client, d_lo + out.len() as u64) {
            Some(lanes) => out.copy_from_slice(&lanes[d_lo as usize..d_lo as usize + out.len()]),
            None => self.fallback.fill(round, client, d_lo, out),
        }
    }

    fn gather(&self, round: u32, client: u32, coords: &[u64], out: &mut [u64]) {
        let d_hi = coords.last().map_or(0, |&d| d + 1);
        match self.cache.covers(round, client, d_hi) {
            Some(lanes) => out.iter_mut().zip(coords).for_each(|(o, &d)| *o = lanes[d as usize]),
            None => self.fallback.gather(round, client, coords, out),
        }
    }

    fn accumulate(&self, round: u32, client: u32, d_lo: u64, coeff: i64, acc: &mut [u64]) {
        match self.cache.covers(round, client, d_lo + acc.len() as u64) {
            Some(lanes) => {
                let src = &lanes[d_lo as usize..d_lo as usize + acc.len()];
                accumulate_into(self.cache.params, coeff, src, acc);
            }
            None => self.fallback.accumulate(round, client, d_lo, coeff, acc),
        }
    }

    fn gather_accumulate(&self, round: u32, client: u32, coords: &[u64], coeff: i64, acc: &mut [u64]) {
        let d_hi = coords.last().map_or(0, |&d| d + 1);
        match self.cache.covers(round, client, d_hi) {
            Some(lanes) => {
                let params = self.cache.params;
                let c = params.coefficient(coeff);
                for (a, &d) in acc.iter_mut().zip(coords) {
                    *a = params.add(*a, lanes[d as usize].wrapping_mul(c));
                }
            }
            None => self.fallback.gather_accumulate(round, client, coords, coeff, acc),
        }
    }

    fn mask_in_place(&self, scheme: Scheme, round: u32, client: u32, buf: &mut [u64]) {
        let d_hi = buf.len() as u64;
        let mask = self.cache.params.residue_mask();
        match (scheme, self.cache.covers(round, client, d_hi), self.cache.covers(round, client + 1, d_hi)) {
            (Scheme::Single, Some(f), _) => accumulate_into(self.cache.params, 1, &f[..buf.len()], buf),
            (Scheme::Double, Some(f), Some(g)) => buf
                .iter_mut()
                .zip(f.iter().zip(g))
                .for_each(|(m, (&a, &b))| *m = m.wrapping_add(a).wrapping_sub(b) & mask),
            _ => {
                self.accumulate(round, client, 0, 1, buf);
                if scheme == Scheme::Double {
                    self.accumulate(round, client + 1, 0, -1, buf);
                }
            }
        }
    }
}
