//! End-to-end orchestration: simulation, optional loopback transport,
//! certification, extraction, testing, image and report artifacts.
//!
//! Every stage reads and writes plain files in one output directory, so each
//! can also run on its own from the artifacts of the stages before it.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::certify::{certify_estimate, Certificate};
use crate::error::{invalid, precondition};
use crate::extract::{extract, output_length, ExtractionParams, Sidecar, DEFAULT_BLOCK_LEN, DEFAULT_EPSILON};
use crate::optics::{MeasurementBoxConfig, Preparation, SourceConfig};
use crate::protocol::{
    estimate_success, expected_raw_rate, BitBlock, BlockKind, Producer, ProtocolConfig, RoundStatistics,
    StatisticsSnapshot, Timeline,
};
use crate::stats::{report_json, report_text, run_suite, SuiteConfig, TestReport};
use crate::transport::{
    read_test_log, stream_device, FaultConfig, IngestStats, SendStats, ServeOptions, Server, StreamOptions,
    GENERATE_FILE, TEST_H_FILE, TEST_V_FILE,
};

pub const SIMULATION_FILE: &str = "simulation.json";
pub const RAW_FILE: &str = "raw.bin";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const EXTRACTED_FILE: &str = "extracted.bin";
pub const EXTRACTION_FILE: &str = "extraction.json";
pub const TESTS_FILE: &str = "tests.json";
pub const IMAGE_FILE: &str = "image.pgm";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TEXT: &str = "summary.txt";

/// Side of the square preview image; 250² pixels × 8 bits = 0.5 Mbit.
pub const IMAGE_SIDE: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Simulate,
    Transport,
    Certify,
    Extract,
    Test,
    Image,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::Transport => "transport",
            Stage::Certify => "certify",
            Stage::Extract => "extract",
            Stage::Test => "test",
            Stage::Image => "image",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

impl StageError {
    pub fn new(stage: Stage, source: impl Into<BoxError>) -> Self {
        StageError {
            stage,
            source: source.into(),
        }
    }
}

fn at<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> StageError {
    move |e| StageError::new(stage, e)
}

pub type StageResult<T> = std::result::Result<T, StageError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub n: usize,
    pub epsilon: f64,
    /// Fixed min-entropy per 8 bits; measured on the raw bits when absent.
    pub h8: Option<f64>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_BLOCK_LEN,
            epsilon: DEFAULT_EPSILON,
            h8: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    #[default]
    None,
    /// Stream every block through a local server and use what it stored.
    Loopback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub mode: TransportMode,
    pub endpoint: String,
    /// Server storage directory; `<out-dir>/storage` when absent.
    pub storage: Option<PathBuf>,
    pub max_datagrams_per_sec: f64,
    pub faults: Option<FaultConfig>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            mode: TransportMode::None,
            endpoint: "127.0.0.1:0".to_string(),
            storage: None,
            max_datagrams_per_sec: StreamOptions::default().max_datagrams_per_sec,
            faults: None,
        }
    }
}

/// One JSON document configures a whole run. `bias`, `block_bits`,
/// `test_rounds` and `round_budget` sit at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    #[serde(rename = "box")]
    pub measurement_box: MeasurementBoxConfig,
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    pub blocks: u64,
    pub extraction: ExtractionConfig,
    pub stats: SuiteConfig,
    pub transport: TransportConfig,
    /// Experiment length the blocks are spread over; 0 follows simulated time.
    pub timeline_days: f64,
    pub rate_bucket_hours: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            measurement_box: MeasurementBoxConfig::default(),
            protocol: ProtocolConfig::default(),
            blocks: 10_000,
            extraction: ExtractionConfig::default(),
            stats: SuiteConfig::default(),
            transport: TransportConfig::default(),
            timeline_days: 22.0,
            rate_bucket_hours: 6.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> StageResult<Self> {
        let config: Self = serde_json::from_str(text).map_err(at(Stage::Config))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> StageResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StageError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> StageResult<()> {
        let config = |e| StageError::new(Stage::Config, e);
        self.source.validate().map_err(config)?;
        self.measurement_box.validate().map_err(config)?;
        self.protocol.validate().map_err(config)?;
        if self.blocks == 0 {
            return Err(config(invalid("blocks must be positive")));
        }
        if !(self.timeline_days >= 0.0 && self.timeline_days.is_finite()) {
            return Err(config(invalid("timeline_days must be finite and non-negative")));
        }
        if !(self.rate_bucket_hours > 0.0 && self.rate_bucket_hours.is_finite()) {
            return Err(config(invalid("rate_bucket_hours must be positive")));
        }
        output_length(self.extraction.h8.unwrap_or(8.0), self.extraction.n, self.extraction.epsilon)
            .map_err(config)?;
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) || self.stats.block_size == 0 {
            return Err(config(invalid("stats needs 0 < alpha < 1 and a positive block_size")));
        }
        Ok(())
    }

    fn timeline(&self) -> Timeline {
        if self.timeline_days > 0.0 {
            Timeline::Spread {
                days: self.timeline_days,
                blocks: self.blocks,
            }
        } else {
            Timeline::Simulated
        }
    }
}

/// Raw generation rate over one slice of the experiment clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBucket {
    pub start_day: f64,
    pub end_day: f64,
    pub blocks: u64,
    pub raw_bits: u64,
    /// Measurement time of the bucket's blocks, test blocks included.
    pub seconds: f64,
    /// Raw bits per second of measurement time.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRecord {
    pub sent: SendStats,
    pub ingest: IngestStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub seed: u64,
    pub blocks: u64,
    pub generate_blocks: u64,
    pub test_h_blocks: u64,
    pub test_v_blocks: u64,
    /// Raw bits handed to extraction (after transport, when enabled).
    pub raw_bits: u64,
    pub windows: u64,
    pub no_click: u64,
    pub double_click: u64,
    /// Discarded windows over all windows.
    pub discard_rate: f64,
    pub measurement_seconds: f64,
    pub raw_rate: f64,
    /// Non-discard rate × generation fraction at day 0, from the configuration.
    pub expected_raw_rate: f64,
    pub switching_seconds: f64,
    pub switches: u64,
    pub timeline_days: f64,
    pub rate_bucket_hours: f64,
    pub rate_table: Vec<RateBucket>,
    pub statistics: StatisticsSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportRecord>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub blocks: Vec<BitBlock>,
    /// Generation-block bits in block order.
    pub raw: Bits,
    pub statistics: RoundStatistics,
    pub record: SimulationRecord,
}

#[derive(Default)]
struct BucketTally {
    blocks: u64,
    raw_bits: u64,
    seconds: f64,
}

/// Runs the producer for `config.blocks` blocks.
pub fn simulate(config: &PipelineConfig) -> StageResult<Simulation> {
    let mut producer = Producer::new(
        config.measurement_box,
        config.source.clone(),
        config.protocol.clone(),
        config.timeline(),
        config.seed,
    )
    .map_err(at(Stage::Config))?;
    let bucket_days = config.rate_bucket_hours / 24.0;
    let mut buckets: BTreeMap<u64, BucketTally> = BTreeMap::new();
    let mut statistics = RoundStatistics::default();
    let mut blocks = Vec::with_capacity(config.blocks as usize);
    let mut raw = Bits::new();
    let mut kinds = [0u64; 3];
    let mut windows = 0u64;

    for _ in 0..config.blocks {
        let run = producer.next_block();
        statistics.merge(&run.stats);
        windows += run.windows;
        kinds[usize::from(run.block.kind.label())] += 1;
        let tally = buckets
            .entry((run.block.produced_at / bucket_days).floor() as u64)
            .or_default();
        tally.blocks += 1;
        tally.seconds += run.windows as f64 * config.source.window;
        if run.block.kind == BlockKind::Generate {
            tally.raw_bits += run.block.bits.len() as u64;
            raw.extend_from_bits(&run.block.bits);
        }
        blocks.push(run.block);
    }

    let rate_table = buckets
        .into_iter()
        .map(|(i, t)| RateBucket {
            start_day: i as f64 * bucket_days,
            end_day: (i + 1) as f64 * bucket_days,
            blocks: t.blocks,
            raw_bits: t.raw_bits,
            seconds: t.seconds,
            rate: if t.seconds > 0.0 { t.raw_bits as f64 / t.seconds } else { 0.0 },
        })
        .collect();
    let (switching_seconds, switches) = producer.switching();
    let measurement_seconds = producer.measurement_seconds();
    let record = SimulationRecord {
        seed: config.seed,
        blocks: config.blocks,
        generate_blocks: kinds[usize::from(BlockKind::Generate.label())],
        test_h_blocks: kinds[usize::from(BlockKind::TestH.label())],
        test_v_blocks: kinds[usize::from(BlockKind::TestV.label())],
        raw_bits: raw.len() as u64,
        windows,
        no_click: statistics.no_click.iter().sum(),
        double_click: statistics.double_click.iter().sum(),
        discard_rate: 0.0,
        measurement_seconds,
        raw_rate: if measurement_seconds > 0.0 { raw.len() as f64 / measurement_seconds } else { 0.0 },
        expected_raw_rate: expected_raw_rate(&config.measurement_box, &config.source, config.protocol.bias, 0.0),
        switching_seconds,
        switches,
        timeline_days: config.timeline_days,
        rate_bucket_hours: config.rate_bucket_hours,
        rate_table,
        statistics: statistics.snapshot(),
        transport: None,
    };
    let mut sim = Simulation {
        blocks,
        raw,
        statistics,
        record,
    };
    sim.record.discard_rate = discard_rate(&sim.record);
    Ok(sim)
}

fn discard_rate(r: &SimulationRecord) -> f64 {
    if r.windows == 0 {
        0.0
    } else {
        (r.no_click + r.double_click) as f64 / r.windows as f64
    }
}

/// Sends every block through a local ingest server, then rebuilds the raw
/// stream and test tallies from what the server stored. Discard tallies never
/// travel on the wire and are kept from the device side.
pub fn loopback(sim: &mut Simulation, transport: &TransportConfig, storage: &Path) -> StageResult<()> {
    let server = Server::bind(&transport.endpoint, storage).map_err(at(Stage::Transport))?;
    let addr = server.local_addr().map_err(at(Stage::Transport))?.to_string();
    let options = ServeOptions {
        expected_blocks: Some(sim.blocks.len() as u64),
        idle_timeout: Duration::from_secs(2),
        ..ServeOptions::default()
    };
    let receiver = thread::spawn(move || server.run(&options));
    let stream = StreamOptions {
        max_datagrams_per_sec: transport.max_datagrams_per_sec,
        faults: transport.faults,
    };
    let sent = stream_device(&sim.blocks, &addr, &stream);
    let ingest = receiver
        .join()
        .map_err(|_| StageError::new(Stage::Transport, "ingest thread panicked"))?
        .map_err(at(Stage::Transport))?;
    let sent = sent.map_err(at(Stage::Transport))?;

    let bytes = std::fs::read(storage.join(GENERATE_FILE)).map_err(at(Stage::Transport))?;
    let raw = Bits::from_bytes_len(&bytes, ingest.generate_bits as usize);
    let mut stats = sim.statistics;
    for (file, prep) in [(TEST_H_FILE, Preparation::H), (TEST_V_FILE, Preparation::V)] {
        let log = read_test_log(&storage.join(file)).map_err(at(Stage::Transport))?;
        let x = prep.index();
        stats.counts[0][x] = 0;
        stats.counts[1][x] = 0;
        for rec in log {
            stats.counts[1][x] += rec.ones as u64;
            stats.counts[0][x] += (rec.bits - rec.ones) as u64;
        }
    }
    let ones = raw.count_ones() as u64;
    let r = Preparation::R.index();
    stats.counts[1][r] = ones;
    stats.counts[0][r] = raw.len() as u64 - ones;

    sim.raw = raw;
    sim.statistics = stats;
    sim.record.raw_bits = sim.raw.len() as u64;
    sim.record.statistics = stats.snapshot();
    sim.record.transport = Some(TransportRecord { sent, ingest });
    Ok(())
}

/// Certifies min-entropy from the test-block tallies.
pub fn certify_statistics(statistics: &RoundStatistics) -> StageResult<Certificate> {
    let estimate = estimate_success(statistics).map_err(at(Stage::Certify))?;
    certify_estimate(&estimate).map_err(at(Stage::Certify))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    #[serde(flatten)]
    pub sidecar: Sidecar,
    pub raw_bits: u64,
    pub extracted_bits: u64,
}

pub fn extract_raw(raw: &Bits, config: &ExtractionConfig) -> StageResult<(Bits, ExtractionRecord)> {
    let params = match config.h8 {
        Some(h8) => ExtractionParams::new(config.n, config.epsilon, h8),
        None => crate::extract::estimate_min_entropy_8(raw)
            .and_then(|h8| ExtractionParams::new(config.n, config.epsilon, h8)),
    }
    .map_err(at(Stage::Extract))?;
    let out = extract(raw, &params).map_err(at(Stage::Extract))?;
    let record = ExtractionRecord {
        sidecar: Sidecar::from(&params),
        raw_bits: raw.len() as u64,
        extracted_bits: out.len() as u64,
    };
    Ok((out, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestsRecord {
    pub block_size: usize,
    pub alpha: f64,
    pub blocks: usize,
    /// Why no test ran, when none did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub reports: Vec<TestReport>,
}

impl TestsRecord {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

/// Runs the configured battery. Too little input for two blocks skips the
/// battery with a note rather than failing the run.
pub fn run_tests(bits: &Bits, config: &SuiteConfig) -> StageResult<TestsRecord> {
    let blocks = bits.len() / config.block_size.max(1);
    let mut record = TestsRecord {
        block_size: config.block_size,
        alpha: config.alpha,
        blocks,
        skipped: None,
        reports: Vec::new(),
    };
    if config.tests.is_empty() {
        record.skipped = Some("no tests configured".to_string());
    } else if blocks < 2 {
        record.skipped = Some(format!(
            "{} extracted bits make fewer than 2 blocks of {}",
            bits.len(),
            config.block_size
        ));
    } else {
        record.reports = run_suite(bits, config).map_err(at(Stage::Test))?;
    }
    Ok(record)
}

/// Binary PGM (P5, maxval 255); each MSB-first byte of `bits` is one pixel,
/// row-major.
pub fn bits_to_image(bits: &Bits, width: usize, height: usize) -> crate::Result<Vec<u8>> {
    let pixels = width * height;
    if width == 0 || height == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    if bits.len() < 8 * pixels {
        return Err(precondition(format!(
            "a {width}x{height} image needs {} bits, got {}",
            8 * pixels,
            bits.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&bits.slice(0, 8 * pixels).to_bytes());
    Ok(out)
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub simulation: SimulationRecord,
    pub certificate: Certificate,
    pub extraction: ExtractionRecord,
    pub tests: TestsRecord,
    /// File name of the preview image, when there were enough bits for it.
    pub image: Option<String>,
}

impl RunSummary {
    pub fn to_json(&self) -> serde_json::Value {
        let sim = &self.simulation;
        let cert = &self.certificate;
        let averaged = cert.averaged.as_ref();
        serde_json::json!({
            "seed": sim.seed,
            "blocks": sim.blocks,
            "raw_bits": sim.raw_bits,
            "raw_rate": sim.raw_rate,
            "expected_raw_rate": sim.expected_raw_rate,
            "discard_rate": sim.discard_rate,
            "p_suc_h": cert.p_suc_h,
            "p_suc_v": cert.p_suc_v,
            "p_suc": averaged.map(|a| a.p_suc),
            "h_min": cert.h_min,
            "h_min_averaged": averaged.map(|a| a.h_min),
            "extracted_bits": self.extraction.extracted_bits,
            "tests_passed": self.tests.all_passed(),
            "tests_note": self.tests.skipped,
            "image": self.image,
            "certificate": cert,
            "extraction": self.extraction,
            "rate_table": sim.rate_table,
            "tests": report_json(&self.tests.reports),
            "simulation": {
                "generate_blocks": sim.generate_blocks,
                "test_h_blocks": sim.test_h_blocks,
                "test_v_blocks": sim.test_v_blocks,
                "windows": sim.windows,
                "no_click": sim.no_click,
                "double_click": sim.double_click,
                "measurement_seconds": sim.measurement_seconds,
                "switching_seconds": sim.switching_seconds,
                "switches": sim.switches,
                "statistics": sim.statistics,
            },
            "transport": sim.transport,
        })
    }

    pub fn to_text(&self) -> String {
        let sim = &self.simulation;
        let cert = &self.certificate;
        let mut out = String::new();
        let _ = writeln!(out, "run: {} blocks, seed {}", sim.blocks, sim.seed);
        let _ = writeln!(
            out,
            "blocks: {} generate, {} test-H, {} test-V",
            sim.generate_blocks, sim.test_h_blocks, sim.test_v_blocks
        );
        let _ = writeln!(
            out,
            "raw: {} bits, {:.3} Mbit/s measured, {:.3} Mbit/s expected at day 0, discard rate {:.6}",
            sim.raw_bits,
            sim.raw_rate / 1e6,
            sim.expected_raw_rate / 1e6,
            sim.discard_rate
        );
        let _ = writeln!(
            out,
            "waveplate switching: {} switches, {:.2} s",
            sim.switches, sim.switching_seconds
        );
        if let Some(t) = &sim.transport {
            let _ = writeln!(
                out,
                "transport: {} sent, {} valid, {} invalid, {} duplicates, {} gaps",
                t.sent.sent,
                t.ingest.valid,
                t.ingest.invalid,
                t.ingest.duplicates,
                t.ingest.gaps.len()
            );
        }
        let sigma = |s: Option<f64>| s.map_or(String::new(), |s| format!(" ± {s:.4}"));
        let _ = writeln!(
            out,
            "P_suc: H {:.4}{}, V {:.4}{}",
            cert.p_suc_h,
            sigma(cert.sigma_h),
            cert.p_suc_v,
            sigma(cert.sigma_v)
        );
        let _ = writeln!(out, "P_g {:.6}, H_min {:.4} bits/round", cert.p_g, cert.h_min);
        if let Some(a) = &cert.averaged {
            let _ = writeln!(
                out,
                "averaged P_suc {:.4}: P_g {:.6}, H_min {:.4} bits/round",
                a.p_suc, a.p_g, a.h_min
            );
        }
        let ex = &self.extraction;
        let _ = writeln!(
            out,
            "extraction: n {}, m {}, h8 {:.4}, {} -> {} bits",
            ex.sidecar.n, ex.sidecar.m, ex.sidecar.h8, ex.raw_bits, ex.extracted_bits
        );
        let _ = writeln!(out, "\nraw rate per {} h", sim.rate_bucket_hours);
        let _ = writeln!(out, "{:>9} {:>9} {:>7} {:>12}", "from day", "to day", "blocks", "Mbit/s");
        for b in &sim.rate_table {
            let _ = writeln!(
                out,
                "{:>9.2} {:>9.2} {:>7} {:>12.4}",
                b.start_day,
                b.end_day,
                b.blocks,
                b.rate / 1e6
            );
        }
        let _ = writeln!(
            out,
            "\nstatistical tests: {} blocks of {} bits, alpha {}",
            self.tests.blocks, self.tests.block_size, self.tests.alpha
        );
        if let Some(note) = &self.tests.skipped {
            let _ = writeln!(out, "({note})");
        }
        out.push_str(&report_text(&self.tests.reports));
        if let Some(image) = &self.image {
            let _ = writeln!(out, "\nimage: {image}");
        }
        out
    }
}

/// Writes `summary.json` and `summary.txt`.
pub fn emit_report(summary: &RunSummary, out_dir: &Path) -> StageResult<()> {
    let json = serde_json::to_string_pretty(&summary.to_json()).map_err(at(Stage::Report))?;
    std::fs::write(out_dir.join(SUMMARY_JSON), json + "\n").map_err(at(Stage::Report))?;
    std::fs::write(out_dir.join(SUMMARY_TEXT), summary.to_text()).map_err(at(Stage::Report))
}

pub fn write_json(path: &Path, value: &impl Serialize, stage: Stage) -> StageResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(at(stage))?;
    std::fs::write(path, text + "\n").map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> StageResult<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

pub fn write_bits(path: &Path, bits: &Bits, stage: Stage) -> StageResult<()> {
    std::fs::write(path, bits.to_bytes()).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))
}

/// Reads `len` bits (MSB-first) from a file; `None` takes every byte.
pub fn read_bits(path: &Path, len: Option<u64>, stage: Stage) -> StageResult<Bits> {
    let bytes = std::fs::read(path).map_err(|e| StageError::new(stage, format!("{}: {e}", path.display())))?;
    let len = len.map_or(bytes.len() * 8, |l| l as usize);
    if len > bytes.len() * 8 {
        return Err(StageError::new(
            stage,
            format!("{} holds {} bits, {len} expected", path.display(), bytes.len() * 8),
        ));
    }
    Ok(Bits::from_bytes_len(&bytes, len))
}

/// Writes the preview image when at least 0.5 Mbit is available.
pub fn write_image(bits: &Bits, out_dir: &Path) -> StageResult<Option<String>> {
    if bits.len() < 8 * IMAGE_SIDE * IMAGE_SIDE {
        return Ok(None);
    }
    let pgm = bits_to_image(bits, IMAGE_SIDE, IMAGE_SIDE).map_err(at(Stage::Image))?;
    std::fs::write(out_dir.join(IMAGE_FILE), pgm).map_err(at(Stage::Image))?;
    Ok(Some(IMAGE_FILE.to_string()))
}

/// Simulate, optionally loop through transport, certify, extract, test, and
/// write every artifact plus the summary into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> StageResult<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(at(Stage::Report))?;

    let mut sim = simulate(config)?;
    if config.transport.mode == TransportMode::Loopback {
        let storage = config.transport.storage.clone().unwrap_or_else(|| out_dir.join("storage"));
        loopback(&mut sim, &config.transport, &storage)?;
    }
    write_json(&out_dir.join(SIMULATION_FILE), &sim.record, Stage::Simulate)?;
    write_bits(&out_dir.join(RAW_FILE), &sim.raw, Stage::Simulate)?;

    let certificate = certify_statistics(&sim.statistics)?;
    write_json(&out_dir.join(CERTIFICATE_FILE), &certificate, Stage::Certify)?;

    let (extracted, extraction) = extract_raw(&sim.raw, &config.extraction)?;
    write_bits(&out_dir.join(EXTRACTED_FILE), &extracted, Stage::Extract)?;
    write_json(&out_dir.join(EXTRACTION_FILE), &extraction, Stage::Extract)?;

    let tests = run_tests(&extracted, &config.stats)?;
    write_json(&out_dir.join(TESTS_FILE), &tests, Stage::Test)?;

    let image = write_image(&extracted, out_dir)?;
    let summary = RunSummary {
        simulation: sim.record,
        certificate,
        extraction,
        tests,
        image,
    };
    emit_report(&summary, out_dir)?;
    Ok(summary)
}

/// Rebuilds the summary from the stage artifacts in `out_dir`.
pub fn load_summary(out_dir: &Path) -> StageResult<RunSummary> {
    let image = out_dir.join(IMAGE_FILE).exists().then(|| IMAGE_FILE.to_string());
    Ok(RunSummary {
        simulation: read_json(&out_dir.join(SIMULATION_FILE), Stage::Report)?,
        certificate: read_json(&out_dir.join(CERTIFICATE_FILE), Stage::Report)?,
        extraction: read_json(&out_dir.join(EXTRACTION_FILE), Stage::Report)?,
        tests: read_json(&out_dir.join(TESTS_FILE), Stage::Report)?,
        image,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub blocks: u64,
    pub raw_bits: u64,
    pub extracted_bits: u64,
    pub simulate_seconds: f64,
    pub extract_seconds: f64,
    /// Raw bits per wall-clock second through simulate, pack and extract.
    pub raw_rate: f64,
}

/// Times simulate → pack → extract for `blocks` blocks of `config`.
pub fn benchmark(config: &PipelineConfig, blocks: u64) -> StageResult<BenchReport> {
    let mut producer = Producer::new(
        config.measurement_box,
        config.source.clone(),
        config.protocol.clone(),
        Timeline::Simulated,
        config.seed,
    )
    .map_err(at(Stage::Config))?;
    let start = Instant::now();
    let mut raw = Bits::with_capacity(blocks as usize * config.protocol.block_bits);
    for _ in 0..blocks {
        let run = producer.next_block();
        if run.block.kind == BlockKind::Generate {
            raw.extend_from_bits(&run.block.bits);
        }
    }
    let simulate_seconds = start.elapsed().as_secs_f64();
    let (extracted, _) = extract_raw(&raw, &config.extraction)?;
    let total = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        blocks,
        raw_bits: raw.len() as u64,
        extracted_bits: extracted.len() as u64,
        simulate_seconds,
        extract_seconds: total - simulate_seconds,
        raw_rate: raw.len() as f64 / total,
    })
}
