//! Byte framing for ciphertexts.
//!
//! Dense ciphertext:
//!
//! ```text
//! "FLSH" | version u8 | b u8 | round u32 BE
//!        | record count u32 BE | (client u32 BE, mult u32 BE)*
//!        | D u64 BE | D residues, b/8 bytes each, little-endian
//! ```
//!
//! Compact (sparse) ciphertext sets [`FLAG_COMPACT`] in the version byte and
//! replaces the record with the sender:
//!
//! ```text
//! "FLSH" | version|0x80 | b u8 | round u32 BE | client u32 BE | D u64 BE | residues
//! ```

use crate::cipher::{Ciphertext, ParticipationRecord};
use crate::error::{Error, Result};
use crate::prf::SchemeParams;
use crate::sparse::CompactCiphertext;

pub const MAGIC: &[u8; 4] = b"FLSH";
pub const VERSION: u8 = 1;
pub const FLAG_COMPACT: u8 = 0x80;

/// Fixed dense header size, excluding the 8 bytes per record entry.
pub const DENSE_HEADER_BYTES: usize = 4 + 1 + 1 + 4 + 4 + 8;
pub const COMPACT_HEADER_BYTES: usize = 4 + 1 + 1 + 4 + 4 + 8;
pub const RECORD_ENTRY_BYTES: usize = 8;

pub fn encoded_len(ct: &Ciphertext) -> usize {
    DENSE_HEADER_BYTES + RECORD_ENTRY_BYTES * ct.record().len() + ct.len() * ct.params().residue_bytes()
}

pub fn compact_encoded_len(ct: &CompactCiphertext) -> usize {
    COMPACT_HEADER_BYTES + ct.len() * ct.params().residue_bytes()
}

fn put_residues(out: &mut Vec<u8>, params: SchemeParams, residues: &[u64]) {
    let width = params.residue_bytes();
    out.reserve(residues.len() * width);
    for &r in residues {
        out.extend_from_slice(&r.to_le_bytes()[..width]);
    }
}

pub fn serialize(ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(ct));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(ct.params().modulus_bits() as u8);
    out.extend_from_slice(&ct.round().to_be_bytes());
    out.extend_from_slice(&(ct.record().len() as u32).to_be_bytes());
    for (client, mult) in ct.record().iter() {
        out.extend_from_slice(&client.to_be_bytes());
        out.extend_from_slice(&mult.to_be_bytes());
    }
    out.extend_from_slice(&(ct.len() as u64).to_be_bytes());
    put_residues(&mut out, ct.params(), ct.residues());
    out
}

pub fn serialize_compact(ct: &CompactCiphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(compact_encoded_len(ct));
    out.extend_from_slice(MAGIC);
    out.push(VERSION | FLAG_COMPACT);
    out.push(ct.params().modulus_bits() as u8);
    out.extend_from_slice(&ct.round().to_be_bytes());
    out.extend_from_slice(&ct.client().to_be_bytes());
    out.extend_from_slice(&(ct.len() as u64).to_be_bytes());
    put_residues(&mut out, ct.params(), ct.residues());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn residues(&mut self, params: SchemeParams, count: u64) -> Result<Vec<u64>> {
        let width = params.residue_bytes();
        let total = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(width))
            .ok_or(Error::Truncated { needed: usize::MAX, available: self.buf.len() - self.pos })?;
        let raw = self.take(total)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..width].copy_from_slice(c);
                u64::from_le_bytes(b)
            })
            .collect())
    }

    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(Error::TrailingBytes(extra)),
        }
    }
}

fn header(r: &mut Reader<'_>, compact: bool) -> Result<SchemeParams> {
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u8()?;
    let expected = if compact { VERSION | FLAG_COMPACT } else { VERSION };
    if version != expected {
        return Err(Error::UnsupportedVersion(version));
    }
    SchemeParams::new(r.u8()? as u32)
}

pub fn deserialize(bytes: &[u8]) -> Result<Ciphertext> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let params = header(&mut r, false)?;
    let round = r.u32()?;
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut prev: Option<u32> = None;
    for _ in 0..count {
        let client = r.u32()?;
        let mult = r.u32()?;
        if prev.is_some_and(|p| p >= client) {
            return Err(Error::BadRecord("record entries must be strictly increasing".into()));
        }
        prev = Some(client);
        entries.push((client, mult));
    }
    let record = ParticipationRecord::from_multiplicities(entries)?;
    let d = r.u64()?;
    let residues = r.residues(params, d)?;
    r.finish()?;
    Ciphertext::from_parts(residues, round, record, params)
}

pub fn deserialize_compact(bytes: &[u8]) -> Result<CompactCiphertext> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let params = header(&mut r, true)?;
    let round = r.u32()?;
    let client = r.u32()?;
    let d = r.u64()?;
    let residues = r.residues(params, d)?;
    r.finish()?;
    CompactCiphertext::from_parts(residues, round, client, params)
}
