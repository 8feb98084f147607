//! Statistical test battery over fixed-size blocks, with per-test pass
//! proportions and their confidence interval.

pub mod battery;

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::bits::Bits;
use crate::error::{invalid, precondition, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestId {
    MonobitFrequency,
    BlockFrequency,
    Runs,
    LongestRun,
    BinaryMatrixRank,
    SpectralDft,
    Serial,
    ApproximateEntropy,
    CumulativeSums,
}

impl TestId {
    pub const ALL: [TestId; 9] = [
        TestId::MonobitFrequency,
        TestId::BlockFrequency,
        TestId::Runs,
        TestId::LongestRun,
        TestId::BinaryMatrixRank,
        TestId::SpectralDft,
        TestId::Serial,
        TestId::ApproximateEntropy,
        TestId::CumulativeSums,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestId::MonobitFrequency => "monobit-frequency",
            TestId::BlockFrequency => "block-frequency",
            TestId::Runs => "runs",
            TestId::LongestRun => "longest-run",
            TestId::BinaryMatrixRank => "binary-matrix-rank",
            TestId::SpectralDft => "spectral-dft",
            TestId::Serial => "serial",
            TestId::ApproximateEntropy => "approximate-entropy",
            TestId::CumulativeSums => "cumulative-sums",
        }
    }

    /// Report rows produced by this test; serial and cumulative sums give two.
    pub fn row_names(self) -> &'static [&'static str] {
        match self {
            TestId::Serial => &["serial-1", "serial-2"],
            TestId::CumulativeSums => &["cumulative-sums-forward", "cumulative-sums-backward"],
            other => match other {
                TestId::MonobitFrequency => &["monobit-frequency"],
                TestId::BlockFrequency => &["block-frequency"],
                TestId::Runs => &["runs"],
                TestId::LongestRun => &["longest-run"],
                TestId::BinaryMatrixRank => &["binary-matrix-rank"],
                TestId::SpectralDft => &["spectral-dft"],
                _ => &["approximate-entropy"],
            },
        }
    }
}

impl FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid(format!("unknown test id {s:?}")))
    }
}

/// Per-test parameters; the defaults are the standard published ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestParams {
    pub block_frequency_m: usize,
    pub rank_rows: usize,
    pub rank_cols: usize,
    pub serial_m: usize,
    pub approximate_entropy_m: usize,
}

impl Default for TestParams {
    fn default() -> Self {
        Self {
            block_frequency_m: 128,
            rank_rows: 32,
            rank_cols: 32,
            serial_m: 16,
            approximate_entropy_m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub block_size: usize,
    pub alpha: f64,
    pub tests: Vec<TestId>,
    pub params: TestParams,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            block_size: 1_000_000,
            alpha: 0.01,
            tests: TestId::ALL.to_vec(),
            params: TestParams::default(),
        }
    }
}

/// p-values of one test on one block, in [`TestId::row_names`] order.
pub fn run_test(test: TestId, block: &Bits, config: &SuiteConfig) -> Result<Vec<f64>> {
    if block.len() != config.block_size {
        return Err(invalid(format!(
            "block must have {} bits, got {}",
            config.block_size,
            block.len()
        )));
    }
    run_on_bits(test, &block.to_u8_vec(), &config.params)
}

fn run_on_bits(test: TestId, bits: &[u8], p: &TestParams) -> Result<Vec<f64>> {
    Ok(match test {
        TestId::MonobitFrequency => vec![battery::monobit(bits)],
        TestId::BlockFrequency => vec![battery::block_frequency(bits, p.block_frequency_m)?],
        TestId::Runs => vec![battery::runs(bits)],
        TestId::LongestRun => vec![battery::longest_run(bits)?],
        TestId::BinaryMatrixRank => vec![battery::binary_matrix_rank(bits, p.rank_rows, p.rank_cols)?],
        TestId::SpectralDft => vec![battery::spectral_dft(bits)],
        TestId::Serial => {
            let (a, b) = battery::serial(bits, p.serial_m)?;
            vec![a, b]
        }
        TestId::ApproximateEntropy => vec![battery::approximate_entropy(bits, p.approximate_entropy_m)?],
        TestId::CumulativeSums => vec![
            battery::cumulative_sums(bits, true),
            battery::cumulative_sums(bits, false),
        ],
    })
}

/// (1−α) ± 3√(α(1−α)/b)
pub fn proportion_confidence(alpha: f64, blocks: usize) -> (f64, f64) {
    let centre = 1.0 - alpha;
    let half = 3.0 * (alpha * (1.0 - alpha) / blocks.max(1) as f64).sqrt();
    (centre - half, centre + half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub p_values: Vec<f64>,
    pub mean_p: f64,
    pub std_p: f64,
    /// Fraction of blocks with p ≥ α.
    pub proportion: f64,
    pub interval: (f64, f64),
    /// Chi-square uniformity of the p-values over ten equal bins.
    pub uniformity_p: f64,
    pub passed: bool,
}

impl TestReport {
    fn new(name: &str, p_values: Vec<f64>, alpha: f64) -> Self {
        let b = p_values.len();
        let mean = p_values.iter().sum::<f64>() / b as f64;
        let var = p_values.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (b.max(2) - 1) as f64;
        let proportion = p_values.iter().filter(|&&p| p >= alpha).count() as f64 / b as f64;
        let interval = proportion_confidence(alpha, b);
        let mut bins = [0u64; 10];
        for &p in &p_values {
            bins[((p * 10.0) as usize).min(9)] += 1;
        }
        let expected = b as f64 / 10.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        TestReport {
            name: name.to_string(),
            mean_p: mean,
            std_p: var.sqrt(),
            proportion,
            interval,
            uniformity_p: gamma_ur(4.5, chi2 / 2.0),
            passed: proportion >= interval.0,
            p_values,
        }
    }

    pub fn failures(&self, alpha: f64) -> usize {
        self.p_values.iter().filter(|&&p| p < alpha).count()
    }
}

/// Splits `bits` into non-overlapping blocks (leftover bits ignored) and runs
/// every configured test on each block.
pub fn run_suite(bits: &Bits, config: &SuiteConfig) -> Result<Vec<TestReport>> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    let blocks = bits.len() / config.block_size.max(1);
    if config.block_size == 0 || blocks < 2 {
        return Err(precondition(format!(
            "statistical suite needs at least 2 blocks of {} bits, got {} bits",
            config.block_size,
            bits.len()
        )));
    }
    let per_block: Vec<Vec<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let block = bits.slice(b * config.block_size, config.block_size).to_u8_vec();
            config
                .tests
                .par_iter()
                .map(|&t| run_on_bits(t, &block, &config.params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (ti, test) in config.tests.iter().enumerate() {
        for (ri, row) in test.row_names().iter().enumerate() {
            let ps = per_block.iter().map(|blk| blk[ti][ri]).collect();
            reports.push(TestReport::new(row, ps, config.alpha));
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ReportRow<'a> {
    name: &'a str,
    mean_p: f64,
    std_p: f64,
    proportion: f64,
    interval: (f64, f64),
    uniformity_p: f64,
    verdict: &'static str,
}

/// JSON summary per test, without the per-block p-value lists.
pub fn report_json(reports: &[TestReport]) -> serde_json::Value {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            name: &r.name,
            mean_p: r.mean_p,
            std_p: r.std_p,
            proportion: r.proportion,
            interval: r.interval,
            uniformity_p: r.uniformity_p,
            verdict: if r.passed { "pass" } else { "fail" },
        })
        .collect();
    serde_json::to_value(rows).expect("plain data")
}

/// Plain-text table with mean and spread of p-values and pass proportions.
pub fn report_text(reports: &[TestReport]) -> String {
    if reports.is_empty() {
        return "no statistical tests run\n".to_string();
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<26} {:>8} {:>8} {:>10} {:>19} {:>10}  verdict",
        "test", "mean p", "std p", "proportion", "interval", "uniform p"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<26} {:>8.4} {:>8.4} {:>10.4} {:>8.4} - {:<8.4} {:>10.4}  {}",
            r.name,
            r.mean_p,
            r.std_p,
            r.proportion,
            r.interval.0,
            r.interval.1,
            r.uniformity_p,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    out
}
