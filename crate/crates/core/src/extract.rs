//! Toeplitz-hashing randomness extraction.
//!
//! The first n+m−1 raw bits seed one m×n Toeplitz matrix T, which is applied
//! over GF(2) to every following n-bit block; the products are concatenated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{invalid, precondition, Result};

pub const DEFAULT_BLOCK_LEN: usize = 400;
/// 2⁻¹⁰⁰
pub const DEFAULT_EPSILON: f64 = 7.888_609_052_210_118e-31;
/// Minimum input for a meaningful byte histogram.
pub const MIN_ENTROPY_SAMPLE_BITS: usize = 8 * 256;

/// Blocks handed to one worker at a time.
const BLOCKS_PER_TASK: usize = 2048;

/// −log₂ of the most frequent value among non-overlapping 8-bit strings.
pub fn estimate_min_entropy_8(bits: &Bits) -> Result<f64> {
    if bits.len() < MIN_ENTROPY_SAMPLE_BITS {
        return Err(precondition(format!(
            "min-entropy estimate needs at least {MIN_ENTROPY_SAMPLE_BITS} bits, got {}",
            bits.len()
        )));
    }
    let bytes = bits.to_bytes();
    let whole = bits.len() / 8;
    let mut histogram = [0u64; 256];
    for &b in &bytes[..whole] {
        histogram[usize::from(b)] += 1;
    }
    let max = *histogram.iter().max().expect("256 bins");
    Ok(-(max as f64 / whole as f64).log2() + 0.0)
}

/// m = ⌊(n/8)·h8 − 2·log₂(1/ε)⌋ clamped to [0, n].
pub fn output_length(h8: f64, n: usize, epsilon: f64) -> Result<usize> {
    if !(0.0..=8.0).contains(&h8) {
        return Err(invalid(format!("h8 must lie in [0, 8], got {h8}")));
    }
    if n == 0 || !n.is_multiple_of(8) {
        return Err(invalid(format!("block length must be a positive multiple of 8, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let m = (n as f64 / 8.0) * h8 + 2.0 * epsilon.log2();
    Ok(m.floor().clamp(0.0, n as f64) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub n: usize,
    pub epsilon: f64,
    pub h8: f64,
    pub m: usize,
}

impl ExtractionParams {
    pub fn new(n: usize, epsilon: f64, h8: f64) -> Result<Self> {
        Ok(Self {
            n,
            epsilon,
            h8,
            m: output_length(h8, n, epsilon)?,
        })
    }

    /// n = 400, ε = 2⁻¹⁰⁰, h8 measured on `raw`.
    pub fn measured(raw: &Bits) -> Result<Self> {
        Self::new(DEFAULT_BLOCK_LEN, DEFAULT_EPSILON, estimate_min_entropy_8(raw)?)
    }

    pub fn seed_len(&self) -> usize {
        (self.n + self.m).saturating_sub(1)
    }
}

/// m×n matrix with `T[i][j] = seed[(m−1) + (j−i)]`. Rows are kept packed so a
/// product bit is the parity of a word-wise AND.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzMatrix {
    n: usize,
    m: usize,
    seed: Bits,
    rows: Vec<Vec<u64>>,
}

pub fn build_toeplitz(seed: &Bits, n: usize, m: usize) -> Result<ToeplitzMatrix> {
    let expected = (n + m).saturating_sub(1);
    if n == 0 || seed.len() != expected {
        return Err(invalid(format!(
            "seed for a {m}x{n} Toeplitz matrix must have {expected} bits, got {}",
            seed.len()
        )));
    }
    let rows = (0..m).map(|i| seed.slice_words(m - 1 - i, n)).collect();
    Ok(ToeplitzMatrix {
        n,
        m,
        seed: seed.clone(),
        rows,
    })
}

impl ToeplitzMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> &Bits {
        &self.seed
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.m && j < self.n, "index out of range");
        self.seed.get(self.m - 1 + j - i)
    }

    /// T·x for packed input words holding exactly n bits, zero padded.
    fn multiply_words(&self, x: &[u64], out: &mut Bits) {
        let mut acc = 0u64;
        let mut filled = 0;
        for row in &self.rows {
            let parity = row.iter().zip(x).fold(0u32, |p, (r, v)| p ^ (r & v).count_ones()) & 1;
            acc |= u64::from(parity) << (63 - filled);
            filled += 1;
            if filled == 64 {
                out.push_word(acc, 64);
                acc = 0;
                filled = 0;
            }
        }
        out.push_word(acc, filled);
    }

    pub fn multiply(&self, block: &Bits) -> Result<Bits> {
        if block.len() != self.n {
            return Err(invalid(format!("block must have {} bits, got {}", self.n, block.len())));
        }
        let mut out = Bits::with_capacity(self.m);
        self.multiply_words(block.words(), &mut out);
        Ok(out)
    }
}

/// Seeds T from the head of `raw` and hashes every following full n-bit block.
pub fn extract(raw: &Bits, params: &ExtractionParams) -> Result<Bits> {
    let ExtractionParams { n, m, .. } = *params;
    output_length(params.h8, n, params.epsilon)?;
    if m > n {
        return Err(invalid(format!("output length {m} exceeds block length {n}")));
    }
    let seed_len = params.seed_len();
    if raw.len() < seed_len + n {
        return Err(precondition(format!(
            "extraction needs at least {} raw bits, got {}",
            seed_len + n,
            raw.len()
        )));
    }
    let t = build_toeplitz(&raw.slice(0, seed_len), n, m)?;
    let blocks = (raw.len() - seed_len) / n;
    let parts: Vec<Bits> = (0..blocks.div_ceil(BLOCKS_PER_TASK))
        .into_par_iter()
        .map(|task| {
            let first = task * BLOCKS_PER_TASK;
            let last = (first + BLOCKS_PER_TASK).min(blocks);
            let mut out = Bits::with_capacity((last - first) * m);
            for b in first..last {
                let words = raw.slice_words(seed_len + b * n, n);
                t.multiply_words(&words, &mut out);
            }
            out
        })
        .collect();
    let mut out = Bits::with_capacity(blocks * m);
    for p in &parts {
        out.extend_from_bits(p);
    }
    Ok(out)
}

/// Metadata written next to an extracted bitstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub h8: f64,
    /// Raw bit offset where extractable blocks begin (the seed precedes it).
    pub seed_offset: usize,
}

impl From<&ExtractionParams> for Sidecar {
    fn from(p: &ExtractionParams) -> Self {
        Sidecar {
            n: p.n,
            m: p.m,
            epsilon: p.epsilon,
            h8: p.h8,
            seed_offset: p.seed_len(),
        }
    }
}
