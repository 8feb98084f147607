//! Packed bit strings.
//!
//! Bits are stored most-significant-bit first inside `u64` words, so that the
//! byte serialization (`to_bytes`) is the natural big-endian MSB-first layout
//! used by every file and wire format in the crate. Bits past `len` in the
//! last word are always zero.

use std::fmt;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn mask(i: usize) -> u64 {
    1u64 << (63 - (i & 63))
}

impl Bits {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    /// Takes the first `len` bits of `bytes`, MSB-first.
    pub fn from_bytes_len(bytes: &[u8], len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "bit length exceeds byte buffer");
        let mut words = Vec::with_capacity(len.div_ceil(64));
        for chunk in bytes[..len.div_ceil(8)].chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            words.push(u64::from_be_bytes(buf));
        }
        let mut bits = Self { words, len };
        bits.clear_tail();
        bits
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self::from_bytes_len(bytes, bytes.len() * 8)
    }

    /// Parses a string of `'0'`/`'1'` characters; whitespace is ignored.
    pub fn parse01(s: &str) -> Option<Self> {
        let mut bits = Self::new();
        for c in s.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                c if c.is_whitespace() => {}
                _ => return None,
            }
        }
        Some(bits)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let i = self.len;
        if i & 63 == 0 {
            self.words.push(0);
        }
        if bit {
            self.words[i >> 6] |= mask(i);
        }
        self.len += 1;
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i >> 6] & mask(i) != 0
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        if bit {
            self.words[i >> 6] |= mask(i);
        } else {
            self.words[i >> 6] &= !mask(i);
        }
    }

    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            self.len = len;
            self.words.truncate(len.div_ceil(64));
            self.clear_tail();
        }
    }

    pub fn extend_from_bits(&mut self, other: &Bits) {
        if self.len & 63 == 0 {
            self.words.truncate(self.len / 64);
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
            return;
        }
        let mut remaining = other.len;
        for &w in &other.words {
            let take = remaining.min(64);
            self.push_word(w, take);
            remaining -= take;
        }
    }

    /// Appends the top `count` bits of `word`.
    pub fn push_word(&mut self, word: u64, count: usize) {
        debug_assert!(count <= 64);
        if count == 0 {
            return;
        }
        let word = if count == 64 { word } else { word & !(u64::MAX >> count) };
        let off = self.len & 63;
        if off == 0 {
            self.words.push(word);
        } else {
            let last = self.words.len() - 1;
            self.words[last] |= word >> off;
            if off + count > 64 {
                self.words.push(word << (64 - off));
            }
        }
        self.len += count;
    }

    /// Copies `len` bits starting at `start` into MSB-first words, zero padded.
    pub fn slice_words(&self, start: usize, len: usize) -> Vec<u64> {
        assert!(start + len <= self.len, "slice out of range");
        let n = len.div_ceil(64);
        let mut out = Vec::with_capacity(n);
        let first = start >> 6;
        let off = start & 63;
        for j in 0..n {
            let hi = self.words[first + j];
            let w = if off == 0 {
                hi
            } else {
                let lo = self.words.get(first + j + 1).copied().unwrap_or(0);
                (hi << off) | (lo >> (64 - off))
            };
            out.push(w);
        }
        let rem = len & 63;
        if rem != 0 {
            if let Some(last) = out.last_mut() {
                *last &= !(u64::MAX >> rem);
            }
        }
        out
    }

    pub fn slice(&self, start: usize, len: usize) -> Bits {
        Bits {
            words: self.slice_words(start, len),
            len,
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// MSB-first byte serialization; the last byte is zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len.div_ceil(8));
        for w in &self.words {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.words[i >> 6] & mask(i) != 0)
    }

    /// Bitwise XOR of two equal-length strings.
    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        Bits {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }

    /// One byte per bit, values 0 or 1. Used by the statistical tests.
    pub fn to_u8_vec(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    fn clear_tail(&mut self) {
        let rem = self.len & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= !(u64::MAX >> rem);
            }
        }
    }
}

impl FromIterator<bool> for Bits {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut bits = Bits::new();
        for b in iter {
            bits.push(b);
        }
        bits
    }
}

impl Extend<bool> for Bits {
    fn extend<I: IntoIterator<Item = bool>>(&mut self, iter: I) {
        for b in iter {
            self.push(b);
        }
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 64;
        write!(f, "Bits[{}](", self.len)?;
        for b in self.iter().take(SHOW) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > SHOW {
            f.write_str("...")?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_get_and_bytes() {
        let bits = Bits::parse01("1011 0000 1").unwrap();
        assert_eq!(bits.len(), 9);
        assert!(bits.get(0) && !bits.get(1) && bits.get(8));
        assert_eq!(bits.to_bytes(), vec![0xB0, 0x80]);
        assert_eq!(Bits::from_bytes(&[0xBE, 0xEF]).to_bytes(), vec![0xBE, 0xEF]);
    }

    #[test]
    fn truncate_clears_tail() {
        let mut bits = Bits::from_bytes(&[0xFF; 16]);
        bits.truncate(70);
        assert_eq!(bits.count_ones(), 70);
        bits.push(false);
        assert_eq!(bits.count_ones(), 70);
    }

    proptest! {
        #[test]
        fn slice_and_extend_agree_with_naive(
            a in proptest::collection::vec(any::<bool>(), 0..300),
            b in proptest::collection::vec(any::<bool>(), 0..300),
            start in 0usize..300,
            len in 0usize..300,
        ) {
            let mut x: Bits = a.iter().copied().collect();
            let y: Bits = b.iter().copied().collect();
            x.extend_from_bits(&y);
            let joined: Vec<bool> = a.iter().chain(b.iter()).copied().collect();
            prop_assert_eq!(x.iter().collect::<Vec<_>>(), joined.clone());
            prop_assert_eq!(x.count_ones(), joined.iter().filter(|&&v| v).count());

            let start = start.min(joined.len());
            let len = len.min(joined.len() - start);
            let s = x.slice(start, len);
            prop_assert_eq!(s.iter().collect::<Vec<_>>(), joined[start..start + len].to_vec());
            let reparsed = Bits::from_bytes_len(&s.to_bytes(), len);
            prop_assert_eq!(reparsed, s);
        }
    }
}
