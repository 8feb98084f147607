//! The individual frequency, run, rank, spectral, pattern and random-walk
//! tests. Every function takes one bit per byte (values 0 or 1).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{invalid, Result};

fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn monobit(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let s: i64 = bits.iter().map(|&b| if b == 1 { 1 } else { -1 }).sum();
    erfc((s.abs() as f64 / n.sqrt()) / std::f64::consts::SQRT_2)
}

pub fn block_frequency(bits: &[u8], m: usize) -> Result<f64> {
    let blocks = bits.len() / m.max(1);
    if m == 0 || blocks == 0 {
        return Err(invalid(format!("block frequency needs at least one block of {m} bits")));
    }
    let chi2: f64 = bits
        .chunks_exact(m)
        .map(|c| {
            let pi = c.iter().map(|&b| u32::from(b)).sum::<u32>() as f64 / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    Ok(igamc(blocks as f64 / 2.0, chi2 / 2.0))
}

pub fn runs(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let pi = bits.iter().map(|&b| u64::from(b)).sum::<u64>() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let q = pi * (1.0 - pi);
    erfc((v as f64 - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q))
}

/// Longest run of ones within M-bit blocks, with the block size and category
/// table chosen from the sequence length.
pub fn longest_run(bits: &[u8]) -> Result<f64> {
    let n = bits.len();
    let (m, lo, probs): (usize, usize, &[f64]) = if n >= 750_000 {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    } else if n >= 6272 {
        (128, 4, &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124])
    } else if n >= 128 {
        (8, 1, &[0.2148, 0.3672, 0.2305, 0.1875])
    } else {
        return Err(invalid("longest-run test needs at least 128 bits"));
    };
    let k = probs.len() - 1;
    let mut nu = vec![0u64; probs.len()];
    let blocks = n / m;
    for block in bits.chunks_exact(m) {
        let (mut run, mut longest) = (0usize, 0usize);
        for &b in block {
            run = if b == 1 { run + 1 } else { 0 };
            longest = longest.max(run);
        }
        nu[longest.clamp(lo, lo + k) - lo] += 1;
    }
    let chi2: f64 = nu
        .iter()
        .zip(probs)
        .map(|(&v, &p)| {
            let e = blocks as f64 * p;
            (v as f64 - e).powi(2) / e
        })
        .sum();
    Ok(igamc(k as f64 / 2.0, chi2 / 2.0))
}

fn gf2_rank(mut rows: Vec<u64>, cols: usize) -> usize {
    let mut rank = 0;
    for col in (64 - cols..64).rev() {
        let bit = 1u64 << col;
        if let Some(p) = (rank..rows.len()).find(|&r| rows[r] & bit != 0) {
            rows.swap(rank, p);
            let pivot = rows[rank];
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && *row & bit != 0 {
                    *row ^= pivot;
                }
            }
            rank += 1;
        }
    }
    rank
}

/// Probability that a random rows×cols GF(2) matrix has rank `r`.
fn rank_probability(r: usize, rows: usize, cols: usize) -> f64 {
    let exponent = (r * (rows + cols - r)) as f64 - (rows * cols) as f64;
    (0..r).fold(2f64.powf(exponent), |acc, i| {
        let i = i as f64;
        acc * (1.0 - 2f64.powf(i - cols as f64)) * (1.0 - 2f64.powf(i - rows as f64))
            / (1.0 - 2f64.powf(i - r as f64))
    })
}

/// (full rank, full rank − 1, lower) counts over consecutive matrices.
fn rank_counts(bits: &[u8], rows: usize, cols: usize) -> [u64; 3] {
    let mut counts = [0u64; 3];
    for chunk in bits.chunks_exact(rows * cols) {
        let m: Vec<u64> = chunk
            .chunks_exact(cols)
            .map(|row| row.iter().fold(0u64, |w, &b| (w << 1) | u64::from(b)) << (64 - cols))
            .collect();
        let full = rows.min(cols);
        match gf2_rank(m, cols) {
            r if r == full => counts[0] += 1,
            r if r + 1 == full => counts[1] += 1,
            _ => counts[2] += 1,
        }
    }
    counts
}

fn rank_p_value(counts: [u64; 3], probs: [f64; 3]) -> f64 {
    let n: u64 = counts.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    (-chi2 / 2.0).exp()
}

pub fn binary_matrix_rank(bits: &[u8], rows: usize, cols: usize) -> Result<f64> {
    if rows == 0 || cols == 0 || cols > 64 {
        return Err(invalid("matrix dimensions must be in 1..=64"));
    }
    if bits.len() / (rows * cols) < 38 {
        return Err(invalid(format!(
            "rank test needs at least 38 matrices ({} bits)",
            38 * rows * cols
        )));
    }
    let full = rows.min(cols);
    let p_full = rank_probability(full, rows, cols);
    let p_minus = rank_probability(full - 1, rows, cols);
    let probs = [p_full, p_minus, 1.0 - p_full - p_minus];
    Ok(rank_p_value(rank_counts(bits, rows, cols), probs))
}

pub fn spectral_dft(bits: &[u8]) -> f64 {
    let n = bits.len();
    let mut x: Vec<Complex<f64>> = bits
        .iter()
        .map(|&b| Complex::new(if b == 1 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut x);
    let threshold = ((1.0f64 / 0.05).ln() * n as f64).sqrt();
    let below = x[..n / 2].iter().filter(|c| c.norm() < threshold).count();
    let expected = 0.95 * n as f64 / 2.0;
    let d = (below as f64 - expected) / (n as f64 * 0.95 * 0.05 / 4.0).sqrt();
    erfc(d.abs() / std::f64::consts::SQRT_2)
}

/// Counts of every overlapping m-bit pattern, the sequence wrapped around.
fn pattern_counts(bits: &[u8], m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = bits.len() as u64;
        return counts;
    }
    let mask = (1usize << m) - 1;
    let mut w = bits[..m - 1].iter().fold(0usize, |w, &b| (w << 1) | usize::from(b));
    for i in 0..bits.len() {
        w = ((w << 1) | usize::from(bits[(i + m - 1) % bits.len()])) & mask;
        counts[w] += 1;
    }
    counts
}

/// Drops the last bit of every pattern.
fn marginalize(counts: &[u64]) -> Vec<u64> {
    counts.chunks_exact(2).map(|c| c[0] + c[1]).collect()
}

pub fn serial(bits: &[u8], m: usize) -> Result<(f64, f64)> {
    let n = bits.len();
    if m < 3 || m >= n {
        return Err(invalid(format!("serial test needs 3 <= m < n, got m = {m}")));
    }
    let psi = |counts: &[u64], k: usize| -> f64 {
        let sum: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
        sum * 2f64.powi(k as i32) / n as f64 - n as f64
    };
    let c_m = pattern_counts(bits, m);
    let c_m1 = marginalize(&c_m);
    let c_m2 = marginalize(&c_m1);
    let (p0, p1, p2) = (psi(&c_m, m), psi(&c_m1, m - 1), psi(&c_m2, m - 2));
    let del1 = p0 - p1;
    let del2 = p0 - 2.0 * p1 + p2;
    Ok((
        igamc(2f64.powi(m as i32 - 2), del1 / 2.0),
        igamc(2f64.powi(m as i32 - 3), del2 / 2.0),
    ))
}

pub fn approximate_entropy(bits: &[u8], m: usize) -> Result<f64> {
    let n = bits.len();
    if m == 0 || m + 1 >= n {
        return Err(invalid(format!("approximate entropy needs 1 <= m < n - 1, got m = {m}")));
    }
    let phi = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                p * p.ln()
            })
            .sum()
    };
    let c_next = pattern_counts(bits, m + 1);
    let c_m = marginalize(&c_next);
    let apen = phi(&c_m) - phi(&c_next);
    let chi2 = 2.0 * n as f64 * (std::f64::consts::LN_2 - apen);
    Ok(igamc(2f64.powi(m as i32 - 1), chi2 / 2.0))
}

pub fn cumulative_sums(bits: &[u8], forward: bool) -> f64 {
    let n = bits.len() as f64;
    let step = |b: &u8| if *b == 1 { 1i64 } else { -1 };
    let walk = |it: &mut dyn Iterator<Item = i64>| {
        let mut s = 0i64;
        it.map(|x| {
            s += x;
            s.abs()
        })
        .max()
        .unwrap_or(0)
    };
    let z = if forward {
        walk(&mut bits.iter().map(step))
    } else {
        walk(&mut bits.iter().rev().map(step))
    } as f64;
    if z == 0.0 {
        return 1.0;
    }
    let sq = n.sqrt();
    let k_range = |lo: f64, hi: f64| (lo.trunc() as i64)..=(hi.trunc() as i64);
    let s1: f64 = k_range((-n / z + 1.0) / 4.0, (n / z - 1.0) / 4.0)
        .map(|k| {
            let k = k as f64;
            normal_cdf((4.0 * k + 1.0) * z / sq) - normal_cdf((4.0 * k - 1.0) * z / sq)
        })
        .sum();
    let s2: f64 = k_range((-n / z - 3.0) / 4.0, (n / z - 1.0) / 4.0)
        .map(|k| {
            let k = k as f64;
            normal_cdf((4.0 * k + 3.0) * z / sq) - normal_cdf((4.0 * k + 1.0) * z / sq)
        })
        .sum();
    (1.0 - s1 + s2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<u8> {
        s.bytes().filter(|b| !b.is_ascii_whitespace()).map(|b| b - b'0').collect()
    }

    /// First 100 binary digits of π, the standard worked-example sequence.
    const PI_100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn monobit_examples() {
        close(monobit(&bits("1011010101")), 0.527089);
        close(monobit(&bits(PI_100)), 0.109599);
        assert_eq!(monobit(&bits("0101")), 1.0);
        assert!(monobit(&vec![1u8; 1_000_000]) < 1e-20);
    }

    #[test]
    fn block_frequency_examples() {
        close(block_frequency(&bits("0110011010"), 3).unwrap(), 0.801252);
        close(block_frequency(&bits(PI_100), 10).unwrap(), 0.706438);
        assert!(block_frequency(&bits("01"), 3).is_err());
    }

    #[test]
    fn runs_examples() {
        close(runs(&bits("1001101011")), 0.147232);
        close(runs(&bits(PI_100)), 0.500798);
        assert_eq!(runs(&[1u8; 100]), 0.0);
    }

    #[test]
    fn longest_run_example() {
        let s = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";
        // χ² = 4.882605 as published; the printed p-value 0.180609 is rounded
        // from table values, scipy gives 0.180598 for this χ²
        close(longest_run(&bits(s)).unwrap(), 0.180598);
        assert!(longest_run(&bits("0101")).is_err());
    }

    #[test]
    fn rank_probabilities_and_example() {
        assert!((rank_probability(32, 32, 32) - 0.2888).abs() < 1e-4);
        assert!((rank_probability(31, 32, 32) - 0.5776).abs() < 1e-4);
        let counts = rank_counts(&bits("01011001001010101101"), 3, 3);
        assert_eq!(counts, [1, 1, 0]);
        assert!((rank_p_value(counts, [0.2888, 0.5776, 0.1336]) - 0.741948).abs() < 1e-6);
        assert_eq!(gf2_rank(vec![0; 32], 32), 0);
        let identity: Vec<u64> = (0..32).map(|i| 1u64 << (63 - i)).collect();
        assert_eq!(gf2_rank(identity, 32), 32);
    }

    fn mixed_bits(n: usize) -> Vec<u8> {
        (0..n as u64)
            .map(|i| {
                let mut x = i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                x ^= x >> 29;
                x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
                x ^= x >> 32;
                (x & 1) as u8
            })
            .collect()
    }

    #[test]
    fn spectral_matches_numpy() {
        // values from numpy.fft with the same threshold and normalization
        close(spectral_dft(&bits("1001010011")), 0.468160);
        close(spectral_dft(&bits(PI_100)), 0.646355);
        close(spectral_dft(&mixed_bits(10_000)), 0.926884);
    }

    #[test]
    fn serial_example() {
        let (p1, p2) = serial(&bits("0011011101"), 3).unwrap();
        close(p1, 0.808792);
        close(p2, 0.670320);
    }

    #[test]
    fn approximate_entropy_examples() {
        close(approximate_entropy(&bits("0100110101"), 3).unwrap(), 0.261961);
        close(approximate_entropy(&bits(PI_100), 2).unwrap(), 0.235301);
    }

    #[test]
    fn cumulative_sums_examples() {
        close(cumulative_sums(&bits("1011010111"), true), 0.4116588);
        close(cumulative_sums(&bits(PI_100), true), 0.219194);
        close(cumulative_sums(&bits(PI_100), false), 0.114866);
    }

    #[test]
    fn pattern_counts_wrap() {
        let c = pattern_counts(&bits("0011011101"), 3);
        assert_eq!(c.iter().sum::<u64>(), 10);
        assert_eq!(marginalize(&c), pattern_counts(&bits("0011011101"), 2));
        assert_eq!(marginalize(&marginalize(&c)), pattern_counts(&bits("0011011101"), 1));
    }
}
