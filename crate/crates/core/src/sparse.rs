//! Top-s% sparsification with error feedback, shared permutation, and
//! coordinate-aligned aggregation of compacted ciphertexts.
//!
//! Compact ciphertexts carry no participation record: the contributor set of
//! each coordinate is recovered from the per-client bitmasks.

use std::collections::BTreeMap;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes256;
use serde::{Deserialize, Serialize};

use crate::bitmask::Bitmask;
use crate::cipher::{check_client, check_residues, Scheme};
use crate::codec::{dequantize_sum, QuantParams};
use crate::error::{Error, Result};
use crate::prf::{prf_input, MaskSource, SchemeParams};

/// Sender id carried by server-side aggregates.
pub const AGGREGATE_CLIENT: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredUpdate {
    pub layers: Vec<Vec<f64>>,
    pub round: u32,
    pub client: u32,
}

impl LayeredUpdate {
    pub fn dense_len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.concat()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseUpdate {
    pub mask: Bitmask,
    /// Selected values in ascending coordinate order.
    pub values: Vec<f64>,
    /// Unselected values, kept locally for the next round.
    pub residual: Vec<f64>,
}

/// Number of entries kept from a layer of `len` at `percent`.
pub fn keep_count(len: usize, percent: f64) -> usize {
    ((percent * len as f64) / 100.0).ceil().min(len as f64) as usize
}

/// Adds the carried residual, then keeps the `ceil(s% * len)` largest
/// magnitudes of each layer (lower index wins ties).
pub fn topk_sparsify(update: &LayeredUpdate, residual: &[f64], percent: f64) -> Result<SparseUpdate> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidParameter(format!("sparsity percent {percent} outside (0, 100]")));
    }
    let total = update.dense_len();
    if !residual.is_empty() && residual.len() != total {
        return Err(Error::LengthMismatch { left: total, right: residual.len() });
    }
    let mut acc = update.flatten();
    for (a, r) in acc.iter_mut().zip(residual) {
        *a += r;
    }
    let mut mask = Bitmask::zeros(total);
    let mut offset = 0usize;
    for layer in &update.layers {
        let len = layer.len();
        let k = keep_count(len, percent);
        if k > 0 {
            let seg = &acc[offset..offset + len];
            let mut order: Vec<usize> = (0..len).collect();
            let by_rank = |a: &usize, b: &usize| seg[*b].abs().total_cmp(&seg[*a].abs()).then(a.cmp(b));
            if k < len {
                order.select_nth_unstable_by(k - 1, by_rank);
            }
            for &i in &order[..k] {
                mask.set(offset + i, true);
            }
        }
        offset += len;
    }
    let values = mask.iter_ones().map(|d| acc[d]).collect();
    for d in mask.iter_ones() {
        acc[d] = 0.0;
    }
    Ok(SparseUpdate { mask, values, residual: acc })
}

/// Values at the set positions of `mask`, in ascending order.
pub fn compact<T: Copy>(dense: &[T], mask: &Bitmask) -> Result<Vec<T>> {
    if dense.len() != mask.len() {
        return Err(Error::LengthMismatch { left: dense.len(), right: mask.len() });
    }
    Ok(mask.iter_ones().map(|d| dense[d]).collect())
}

/// Inverse of [`compact`]: zeros outside the mask.
pub fn expand<T: Copy + Default>(mask: &Bitmask, values: &[T]) -> Result<Vec<T>> {
    if values.len() != mask.count_ones() {
        return Err(Error::LengthMismatch { left: mask.count_ones(), right: values.len() });
    }
    let mut out = vec![T::default(); mask.len()];
    for (d, &v) in mask.iter_ones().zip(values) {
        out[d] = v;
    }
    Ok(out)
}

/// Secret shared by all clients (not the server) plus the round index.
#[derive(Clone, PartialEq, Eq)]
pub struct PermutationSeed {
    pub secret: [u8; 32],
    pub round: u32,
}

impl std::fmt::Debug for PermutationSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PermutationSeed").field("round", &self.round).finish_non_exhaustive()
    }
}

/// Client slot reserved for the permutation stream; never a valid mask index.
const PERMUTATION_DOMAIN: u32 = u32::MAX;

struct PermutationStream {
    cipher: Aes256,
    round: u32,
    counter: u64,
    buffered: Option<u64>,
}

impl PermutationStream {
    fn new(seed: &PermutationSeed) -> Self {
        Self {
            cipher: Aes256::new(GenericArray::from_slice(&seed.secret)),
            round: seed.round,
            counter: 0,
            buffered: None,
        }
    }

    fn next_u64(&mut self) -> u64 {
        if let Some(v) = self.buffered.take() {
            return v;
        }
        let mut b = GenericArray::from(prf_input(self.round, PERMUTATION_DOMAIN, self.counter));
        self.counter += 1;
        self.cipher.encrypt_block(&mut b);
        let word = u128::from_be_bytes(b.into());
        self.buffered = Some(word as u64);
        (word >> 64) as u64
    }

    /// Unbiased draw from `0..bound`.
    fn below(&mut self, bound: u64) -> u64 {
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % bound;
            }
        }
    }
}

/// Index permutation: `permuted[i] = original[source[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    source: Vec<usize>,
}

impl Permutation {
    /// Fisher–Yates shuffle driven by the seed's keyed stream.
    pub fn derive(seed: &PermutationSeed, len: usize) -> Self {
        let mut source: Vec<usize> = (0..len).collect();
        let mut stream = PermutationStream::new(seed);
        for i in (1..len).rev() {
            let j = stream.below(i as u64 + 1) as usize;
            source.swap(i, j);
        }
        Self { source }
    }

    pub fn identity(len: usize) -> Self {
        Self { source: (0..len).collect() }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn apply<T: Copy>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: x.len() });
        }
        Ok(self.source.iter().map(|&s| x[s]).collect())
    }

    pub fn invert<T: Copy + Default>(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: y.len() });
        }
        let mut out = vec![T::default(); y.len()];
        for (i, &s) in self.source.iter().enumerate() {
            out[s] = y[i];
        }
        Ok(out)
    }

    pub fn apply_mask(&self, mask: &Bitmask) -> Result<Bitmask> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: mask.len() });
        }
        let mut out = Bitmask::zeros(mask.len());
        for (i, &s) in self.source.iter().enumerate() {
            if mask.get(s) {
                out.set(i, true);
            }
        }
        Ok(out)
    }

    pub fn invert_mask(&self, mask: &Bitmask) -> Result<Bitmask> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch { left: self.len(), right: mask.len() });
        }
        let mut out = Bitmask::zeros(mask.len());
        for (i, &s) in self.source.iter().enumerate() {
            if mask.get(i) {
                out.set(s, true);
            }
        }
        Ok(out)
    }
}

/// Masked residues of the set coordinates of one client's (or the server's) mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactCiphertext {
    residues: Vec<u64>,
    round: u32,
    client: u32,
    params: SchemeParams,
}

impl CompactCiphertext {
    pub fn from_parts(residues: Vec<u64>, round: u32, client: u32, params: SchemeParams) -> Result<Self> {
        check_residues(params, &residues)?;
        Ok(Self { residues, round, client, params })
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn client(&self) -> u32 {
        self.client
    }

    pub fn params(&self) -> SchemeParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

/// Encrypts quantized values sitting at the set coordinates of `mask`.
pub fn encrypt_compact<S: MaskSource + ?Sized>(
    src: &S,
    scheme: Scheme,
    round: u32,
    client: u32,
    mask: &Bitmask,
    values: &[u64],
) -> Result<CompactCiphertext> {
    check_client(client)?;
    let params = src.params();
    check_residues(params, values)?;
    let coords: Vec<u64> = mask.iter_ones().map(|d| d as u64).collect();
    if coords.len() != values.len() {
        return Err(Error::LengthMismatch { left: coords.len(), right: values.len() });
    }
    let mut residues = values.to_vec();
    src.gather_accumulate(round, client, &coords, 1, &mut residues);
    if scheme == Scheme::Double {
        src.gather_accumulate(round, client + 1, &coords, -1, &mut residues);
    }
    Ok(CompactCiphertext { residues, round, client, params })
}

/// Server-side sum of compact ciphertexts, aligned by coordinate.
///
/// Returns per-coordinate contributor counts and an aggregate over the union
/// of the masks.
pub fn aggregate_aligned(inputs: &[(Bitmask, CompactCiphertext)]) -> Result<(Vec<u32>, CompactCiphertext)> {
    let Some((mask0, ct0)) = inputs.first() else {
        return Err(Error::InvalidParameter("nothing to aggregate".into()));
    };
    let (len, round, params) = (mask0.len(), ct0.round, ct0.params);
    let mut acc = vec![0u64; len];
    let mut counts = vec![0u32; len];
    for (mask, ct) in inputs {
        if mask.len() != len {
            return Err(Error::LengthMismatch { left: len, right: mask.len() });
        }
        if ct.round != round {
            return Err(Error::RoundMismatch { left: round, right: ct.round });
        }
        if ct.params != params {
            return Err(Error::ParamsMismatch);
        }
        if mask.count_ones() != ct.len() {
            return Err(Error::LengthMismatch { left: mask.count_ones(), right: ct.len() });
        }
        for (d, &r) in mask.iter_ones().zip(&ct.residues) {
            acc[d] = params.add(acc[d], r);
            counts[d] += 1;
        }
    }
    let residues = acc.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(&a, _)| a).collect();
    Ok((counts, CompactCiphertext { residues, round, client: AGGREGATE_CLIENT, params }))
}

fn check_counts(masks: &BTreeMap<u32, Bitmask>, counts: &[u32]) -> Result<()> {
    let mut expect = vec![0u32; counts.len()];
    for mask in masks.values() {
        if mask.len() != counts.len() {
            return Err(Error::LengthMismatch { left: counts.len(), right: mask.len() });
        }
        for d in mask.iter_ones() {
            expect[d] += 1;
        }
    }
    match expect.iter().zip(counts).position(|(a, b)| a != b) {
        Some(d) => Err(Error::InconsistentMasks(d)),
        None => Ok(()),
    }
}

/// Removes masks from an aligned aggregate; returns dense plaintext sums in
/// `Z_{2^b}`, zero where no client contributed.
pub fn decrypt_sparse_residues<S: MaskSource + ?Sized>(
    src: &S,
    aggregated: &CompactCiphertext,
    masks: &BTreeMap<u32, Bitmask>,
    counts: &[u32],
    scheme: Scheme,
) -> Result<Vec<u64>> {
    let params = src.params();
    if params != aggregated.params {
        return Err(Error::ParamsMismatch);
    }
    check_counts(masks, counts)?;
    let support = counts.iter().filter(|&&c| c > 0).count();
    if support != aggregated.len() {
        return Err(Error::LengthMismatch { left: support, right: aggregated.len() });
    }
    let mut out = vec![0u64; counts.len()];
    for (d, &r) in counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(d, _)| d).zip(&aggregated.residues) {
        out[d] = r;
    }
    let round = aggregated.round;
    let mut apply = |client: u32, coords: &Bitmask, coeff: i64| {
        let coords: Vec<u64> = coords.iter_ones().map(|d| d as u64).collect();
        if coords.is_empty() {
            return;
        }
        let mut delta = vec![0u64; coords.len()];
        src.gather_accumulate(round, client, &coords, coeff, &mut delta);
        for (&d, &v) in coords.iter().zip(&delta) {
            out[d as usize] = params.add(out[d as usize], v);
        }
    };
    match scheme {
        Scheme::Single => {
            for (&j, mask) in masks {
                apply(j, mask, -1);
            }
        }
        Scheme::Double => {
            // coefficient of F(j) at coordinate d is [j-1 in S_d] - [j in S_d]
            let empty = Bitmask::zeros(counts.len());
            let mut candidates: Vec<u32> = masks.keys().flat_map(|&j| [j, j.saturating_add(1)]).collect();
            candidates.sort_unstable();
            candidates.dedup();
            for j in candidates {
                let below = j.checked_sub(1).and_then(|p| masks.get(&p)).unwrap_or(&empty);
                let here = masks.get(&j).unwrap_or(&empty);
                apply(j, &here.and_not(below)?, -1);
                apply(j, &below.and_not(here)?, 1);
            }
        }
    }
    Ok(out)
}

/// [`decrypt_sparse_residues`] followed by per-coordinate dequantization.
pub fn decrypt_sparse<S: MaskSource + ?Sized>(
    src: &S,
    aggregated: &CompactCiphertext,
    masks: &BTreeMap<u32, Bitmask>,
    counts: &[u32],
    scheme: Scheme,
    quant: &QuantParams,
) -> Result<Vec<f64>> {
    let sums = decrypt_sparse_residues(src, aggregated, masks, counts, scheme)?;
    sums.iter().zip(counts).map(|(&q, &k)| if k == 0 { Ok(0.0) } else { dequantize_sum(q, k as u64, quant) }).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    Sum,
    #[default]
    Mean,
}

pub fn normalize(sums: &[f64], counts: &[u32], mode: NormalizeMode) -> Result<Vec<f64>> {
    if sums.len() != counts.len() {
        return Err(Error::LengthMismatch { left: sums.len(), right: counts.len() });
    }
    Ok(match mode {
        NormalizeMode::Sum => sums.to_vec(),
        NormalizeMode::Mean => {
            sums.iter().zip(counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
        }
    })
}
