//! Fixed-length coordinate bitmask.
//!
//! On the wire a mask of `D` bits is `ceil(D / 8)` bytes with bit `d` stored
//! in byte `d / 8` at position `d % 8` (least significant first).

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Bitmask {
    len: usize,
    words: Vec<u64>,
}

impl Bitmask {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut m = Self { len, words: vec![u64::MAX; len.div_ceil(64)] };
        m.clear_tail();
        m
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut m = Self::zeros(bits.len());
        for (d, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            m.set(d, true);
        }
        m
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::zeros(len);
        for d in indices {
            m.set(d, true);
        }
        m
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, d: usize) -> bool {
        assert!(d < self.len, "bit {d} out of range for mask of {}", self.len);
        self.words[d / 64] >> (d % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, d: usize, value: bool) {
        assert!(d < self.len, "bit {d} out of range for mask of {}", self.len);
        let bit = 1u64 << (d % 64);
        if value {
            self.words[d / 64] |= bit;
        } else {
            self.words[d / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Set positions in ascending order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }

    fn zip_words(&self, other: &Bitmask, f: impl Fn(u64, u64) -> u64) -> Result<Bitmask> {
        if self.len != other.len {
            return Err(Error::LengthMismatch { left: self.len, right: other.len });
        }
        let words = self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect();
        Ok(Bitmask { len: self.len, words })
    }

    pub fn or(&self, other: &Bitmask) -> Result<Bitmask> {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn and(&self, other: &Bitmask) -> Result<Bitmask> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn and_not(&self, other: &Bitmask) -> Result<Bitmask> {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn byte_len(&self) -> usize {
        self.len.div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.byte_len());
        out
    }

    /// Parses `ceil(len / 8)` bytes; padding bits past `len` must be zero.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        let need = len.div_ceil(8);
        if bytes.len() < need {
            return Err(Error::Truncated { needed: need, available: bytes.len() });
        }
        if bytes.len() > need {
            return Err(Error::TrailingBytes(bytes.len() - need));
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            words[i] = u64::from_le_bytes(buf);
        }
        let mask = Bitmask { len, words };
        let mut check = mask.clone();
        check.clear_tail();
        if check != mask {
            return Err(Error::InvalidParameter("nonzero padding bits in bitmask".into()));
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout_is_lsb_first() {
        let m = Bitmask::from_indices(10, [0, 3, 9]);
        assert_eq!(m.to_bytes(), vec![0b0000_1001, 0b0000_0010]);
        assert_eq!(Bitmask::from_bytes(10, &m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn ones_clears_padding() {
        let m = Bitmask::ones(70);
        assert_eq!(m.count_ones(), 70);
        assert_eq!(m.to_bytes().len(), 9);
        assert_eq!(*m.to_bytes().last().unwrap(), 0b0011_1111);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Bitmask::from_bytes(9, &[0]), Err(Error::Truncated { .. })));
        assert!(matches!(Bitmask::from_bytes(8, &[0, 0]), Err(Error::TrailingBytes(1))));
        assert!(Bitmask::from_bytes(4, &[0xF0]).is_err());
    }

    #[test]
    fn set_operations() {
        let a = Bitmask::from_bools(&[true, true, false, false]);
        let b = Bitmask::from_bools(&[false, true, true, false]);
        assert_eq!(a.or(&b).unwrap(), Bitmask::from_bools(&[true, true, true, false]));
        assert_eq!(a.and(&b).unwrap(), Bitmask::from_bools(&[false, true, false, false]));
        assert_eq!(a.and_not(&b).unwrap(), Bitmask::from_bools(&[true, false, false, false]));
        assert!(a.or(&Bitmask::zeros(5)).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let m = Bitmask::from_bools(&bits);
            prop_assert_eq!(m.count_ones(), bits.iter().filter(|&&b| b).count());
            let ones: Vec<usize> = m.iter_ones().collect();
            let expect: Vec<usize> = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            prop_assert_eq!(ones, expect);
            prop_assert_eq!(Bitmask::from_bytes(bits.len(), &m.to_bytes()).unwrap(), m);
        }
    }
}
