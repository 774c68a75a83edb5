//! The masking cipher: encryption, homomorphic addition and decryption.
//!
//! Double masking encrypts `m_d` for client `j` in round `i` as
//! `m_d + F(i, j, d) - F(i, j + 1, d)`. When ciphertexts from neighbouring
//! clients are summed, the interior masks cancel and only the masks at the
//! boundaries of each run of client indices survive; [`boundary_plan`]
//! computes exactly those survivors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::{MaskSource, SchemeParams};

/// Multiset of contributing client indices, kept as `client -> multiplicity`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationRecord(BTreeMap<u32, u32>);

impl ParticipationRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(client: u32) -> Self {
        Self(BTreeMap::from([(client, 1)]))
    }

    /// Builds a record from explicit multiplicities; zero counts are rejected.
    pub fn from_multiplicities(entries: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (client, mult) in entries {
            if mult == 0 {
                return Err(Error::BadRecord(format!("zero multiplicity for client {client}")));
            }
            let slot = map.entry(client).or_insert(0u32);
            *slot = slot
                .checked_add(mult)
                .ok_or_else(|| Error::BadRecord(format!("multiplicity overflow for client {client}")))?;
        }
        Ok(Self(map))
    }

    pub fn multiplicity(&self, client: u32) -> u32 {
        self.0.get(&client).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of distinct clients.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Sum of multiplicities.
    pub fn total(&self) -> u64 {
        self.0.values().map(|&m| m as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.0.iter().map(|(&c, &m)| (c, m))
    }

    /// Multiset union: multiplicities add.
    pub fn union_with(&mut self, other: &ParticipationRecord) {
        for (&client, &mult) in &other.0 {
            let slot = self.0.entry(client).or_insert(0);
            *slot = slot.saturating_add(mult);
        }
    }

    pub fn union(&self, other: &ParticipationRecord) -> ParticipationRecord {
        let mut out = self.clone();
        out.union_with(other);
        out
    }
}

/// Surviving masks after telescoping: `sum_j coeff_j * F(i, j, d)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundaryPlan {
    pub terms: Vec<(u32, i64)>,
}

impl BoundaryPlan {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Reduces `sum_{j in S} mult(j) * (F(j + 1) - F(j))` to its nonzero terms.
///
/// The coefficient of `F(j)` is `mult(j - 1) - mult(j)`.
pub fn boundary_plan(record: &ParticipationRecord) -> BoundaryPlan {
    let mut candidates: Vec<u32> = Vec::with_capacity(record.len() * 2);
    for (client, _) in record.iter() {
        candidates.push(client);
        // clients are validated below u32::MAX at encryption time
        candidates.push(client.saturating_add(1));
    }
    candidates.sort_unstable();
    candidates.dedup();
    let terms = candidates
        .into_iter()
        .filter_map(|j| {
            let below = if j == 0 { 0 } else { record.multiplicity(j - 1) as i64 };
            let coeff = below - record.multiplicity(j) as i64;
            (coeff != 0).then_some((j, coeff))
        })
        .collect();
    BoundaryPlan { terms }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub(crate) residues: Vec<u64>,
    pub(crate) round: u32,
    pub(crate) record: ParticipationRecord,
    pub(crate) params: SchemeParams,
}

impl Ciphertext {
    /// Assembles a ciphertext from parts, checking residues fit the ring.
    pub fn from_parts(
        residues: Vec<u64>,
        round: u32,
        record: ParticipationRecord,
        params: SchemeParams,
    ) -> Result<Self> {
        check_residues(params, &residues)?;
        Ok(Self { residues, round, record, params })
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn record(&self) -> &ParticipationRecord {
        &self.record
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

    /// In-place homomorphic addition.
    pub fn add_assign(&mut self, other: &Ciphertext) -> Result<()> {
        check_compatible(self, other)?;
        let params = self.params;
        for (a, &b) in self.residues.iter_mut().zip(&other.residues) {
            *a = params.add(*a, b);
        }
        self.record.union_with(&other.record);
        Ok(())
    }
}

fn check_compatible(a: &Ciphertext, b: &Ciphertext) -> Result<()> {
    if a.round != b.round {
        return Err(Error::RoundMismatch { left: a.round, right: b.round });
    }
    if a.params != b.params {
        return Err(Error::ParamsMismatch);
    }
    if a.residues.len() != b.residues.len() {
        return Err(Error::LengthMismatch { left: a.residues.len(), right: b.residues.len() });
    }
    Ok(())
}

pub(crate) fn check_residues(params: SchemeParams, values: &[u64]) -> Result<()> {
    match values.iter().position(|&v| !params.contains(v)) {
        Some(index) => Err(Error::PlaintextOutOfRange { index, value: values[index] }),
        None => Ok(()),
    }
}

pub(crate) fn check_client(client: u32) -> Result<()> {
    // j + 1 must stay representable
    if client == 0 || client == u32::MAX {
        return Err(Error::InvalidClient(client));
    }
    Ok(())
}

/// Which masking variant a round uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Double,
    Single,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Double => "double",
            Scheme::Single => "single",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Scheme::Double),
            "single" => Ok(Scheme::Single),
            other => Err(Error::InvalidParameter(format!("unknown masking scheme {other:?}"))),
        }
    }
}

pub fn encrypt_double<S: MaskSource + ?Sized>(
    src: &S,
    round: u32,
    client: u32,
    plaintext: &[u64],
) -> Result<Ciphertext> {
    encrypt_owned(src, Scheme::Double, round, client, plaintext.to_vec())
}

pub fn encrypt_single<S: MaskSource + ?Sized>(
    src: &S,
    round: u32,
    client: u32,
    plaintext: &[u64],
) -> Result<Ciphertext> {
    encrypt_owned(src, Scheme::Single, round, client, plaintext.to_vec())
}

/// Encrypts in place, reusing the plaintext buffer for the residues.
pub fn encrypt_owned<S: MaskSource + ?Sized>(
    src: &S,
    scheme: Scheme,
    round: u32,
    client: u32,
    mut plaintext: Vec<u64>,
) -> Result<Ciphertext> {
    check_client(client)?;
    let params = src.params();
    check_residues(params, &plaintext)?;
    src.mask_in_place(scheme, round, client, &mut plaintext);
    Ok(Ciphertext { residues: plaintext, round, record: ParticipationRecord::singleton(client), params })
}

pub fn encrypt<S: MaskSource + ?Sized>(
    src: &S,
    scheme: Scheme,
    round: u32,
    client: u32,
    plaintext: &[u64],
) -> Result<Ciphertext> {
    match scheme {
        Scheme::Double => encrypt_double(src, round, client, plaintext),
        Scheme::Single => encrypt_single(src, round, client, plaintext),
    }
}

pub fn hom_add(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Folds a non-empty sequence of ciphertexts with [`hom_add`].
pub fn hom_sum<'a>(cts: impl IntoIterator<Item = &'a Ciphertext>) -> Result<Option<Ciphertext>> {
    let mut iter = cts.into_iter();
    let Some(first) = iter.next() else { return Ok(None) };
    let mut acc = first.clone();
    for ct in iter {
        acc.add_assign(ct)?;
    }
    Ok(Some(acc))
}

/// Decrypts a double-masked aggregate using only the boundary masks.
pub fn decrypt_double<S: MaskSource + ?Sized>(src: &S, ct: &Ciphertext) -> Result<Vec<u64>> {
    if src.params() != ct.params {
        return Err(Error::ParamsMismatch);
    }
    let mut out = ct.residues.clone();
    if out.is_empty() {
        return Ok(out);
    }
    for (client, coeff) in boundary_plan(&ct.record).terms {
        src.accumulate(ct.round, client, 0, coeff, &mut out);
    }
    Ok(out)
}

/// Decrypts a single-masked aggregate: one mask per contribution.
pub fn decrypt_single<S: MaskSource + ?Sized>(src: &S, ct: &Ciphertext) -> Result<Vec<u64>> {
    if src.params() != ct.params {
        return Err(Error::ParamsMismatch);
    }
    let mut out = ct.residues.clone();
    if out.is_empty() {
        return Ok(out);
    }
    for (client, mult) in ct.record.iter() {
        src.accumulate(ct.round, client, 0, -(mult as i64), &mut out);
    }
    Ok(out)
}

pub fn decrypt<S: MaskSource + ?Sized>(src: &S, scheme: Scheme, ct: &Ciphertext) -> Result<Vec<u64>> {
    match scheme {
        Scheme::Double => decrypt_double(src, ct),
        Scheme::Single => decrypt_single(src, ct),
    }
}
