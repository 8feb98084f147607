use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mdi_qrng::certify::{certify, certify_with_oracle, MIN_ORACLE_RESOLUTION};
use mdi_qrng::pipeline::{
    benchmark, bits_to_image, certify_statistics, emit_report, extract_raw, load_summary, read_bits, read_json,
    run_pipeline, run_tests, simulate, write_bits, write_json, ExtractionRecord, PipelineConfig, SimulationRecord,
    Stage, StageError, StageResult, TransportMode, CERTIFICATE_FILE, EXTRACTED_FILE, EXTRACTION_FILE, IMAGE_FILE,
    IMAGE_SIDE, RAW_FILE, SIMULATION_FILE, SUMMARY_TEXT, TESTS_FILE,
};
use mdi_qrng::protocol::RoundStatistics;
use mdi_qrng::stats::report_text;
use mdi_qrng::transport::{serve_collect, stream_device, ServeOptions, StreamOptions};

/// Simulate, certify, extract and test MDI quantum random numbers.
#[derive(Parser)]
#[command(name = "qrng", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// UDP endpoint: the target for `stream`, the bind address for `serve`,
    /// and turns on the loopback for `run`.
    #[arg(long)]
    endpoint: Option<String>,
}

impl Common {
    fn pipeline_config(&self) -> StageResult<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(blocks) = self.blocks {
            config.blocks = blocks;
        }
        if let Some(endpoint) = &self.endpoint {
            config.transport.endpoint = endpoint.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn create_out_dir(&self, stage: Stage) -> StageResult<()> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| StageError::new(stage, format!("{}: {e}", self.out_dir.display())))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline into the output directory.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate blocks; writes simulation.json and raw.bin.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Certify min-entropy from simulation.json, or from given success probabilities.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "p_suc_v")]
        p_suc_h: Option<f64>,
        #[arg(long, requires = "p_suc_h")]
        p_suc_v: Option<f64>,
        /// Also solve the grid oracle at this resolution.
        #[arg(long)]
        oracle: Option<usize>,
    },
    /// Toeplitz-extract raw.bin (or --input); writes extracted.bin and extraction.json.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        h8: Option<f64>,
    },
    /// Run the statistical battery on extracted.bin (or --input).
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Grayscale PGM from extracted.bin (or --input), one byte per pixel.
    Image {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = IMAGE_SIDE)]
        width: usize,
        #[arg(long, default_value_t = IMAGE_SIDE)]
        height: usize,
    },
    /// Simulate blocks and send them to --endpoint.
    Stream {
        #[command(flatten)]
        common: Common,
    },
    /// Receive blocks on --endpoint into per-state files.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Stop once this many consecutive block ids have arrived.
        #[arg(long)]
        expected: Option<u64>,
        /// Seconds without a datagram before stopping.
        #[arg(long, default_value_t = 10.0)]
        idle_timeout: f64,
    },
    /// Rebuild summary.json and summary.txt from the stage artifacts.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Time simulate, pack and extract; the block count defaults to 200.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Fail when the raw rate falls below this many bit/s.
        #[arg(long)]
        min_rate: Option<f64>,
    },
}

fn raw_bits(common: &Common, input: Option<&Path>) -> StageResult<mdi_qrng::Bits> {
    match input {
        Some(path) => read_bits(path, None, Stage::Extract),
        None => {
            let sim: SimulationRecord = read_json(&common.out(SIMULATION_FILE), Stage::Extract)?;
            read_bits(&common.out(RAW_FILE), Some(sim.raw_bits), Stage::Extract)
        }
    }
}

fn extracted_bits(common: &Common, input: Option<&Path>, stage: Stage) -> StageResult<mdi_qrng::Bits> {
    match input {
        Some(path) => read_bits(path, None, stage),
        None => {
            let ex: ExtractionRecord = read_json(&common.out(EXTRACTION_FILE), stage)?;
            read_bits(&common.out(EXTRACTED_FILE), Some(ex.extracted_bits), stage)
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("plain data"));
}

fn execute(command: Command) -> StageResult<()> {
    match command {
        Command::Run { common } => {
            let mut config = common.pipeline_config()?;
            if common.endpoint.is_some() {
                config.transport.mode = TransportMode::Loopback;
            }
            run_pipeline(&config, &common.out_dir)?;
            let text = std::fs::read_to_string(common.out(SUMMARY_TEXT)).unwrap_or_default();
            print!("{text}");
        }
        Command::Simulate { common } => {
            let config = common.pipeline_config()?;
            common.create_out_dir(Stage::Simulate)?;
            let sim = simulate(&config)?;
            write_json(&common.out(SIMULATION_FILE), &sim.record, Stage::Simulate)?;
            write_bits(&common.out(RAW_FILE), &sim.raw, Stage::Simulate)?;
            println!(
                "{} blocks, {} raw bits, discard rate {:.6}",
                sim.record.blocks, sim.record.raw_bits, sim.record.discard_rate
            );
        }
        Command::Certify {
            common,
            p_suc_h,
            p_suc_v,
            oracle,
        } => {
            let cert = match (p_suc_h, p_suc_v) {
                (Some(h), Some(v)) => certify(h, v).map_err(|e| StageError::new(Stage::Certify, e))?,
                _ => {
                    let sim: SimulationRecord = read_json(&common.out(SIMULATION_FILE), Stage::Certify)?;
                    let cert = certify_statistics(&RoundStatistics::from(&sim.statistics))?;
                    write_json(&common.out(CERTIFICATE_FILE), &cert, Stage::Certify)?;
                    cert
                }
            };
            print_json(&cert);
            if let Some(res) = oracle {
                let check = certify_with_oracle(cert.p_suc_h, cert.p_suc_v, res.max(MIN_ORACLE_RESOLUTION))
                    .map_err(|e| StageError::new(Stage::Certify, e))?;
                println!("oracle P_g {:.6}, H_min {:.4}", check.p_g, check.h_min);
            }
        }
        Command::Extract { common, input, h8 } => {
            let mut config = common.pipeline_config()?;
            if h8.is_some() {
                config.extraction.h8 = h8;
            }
            let raw = raw_bits(&common, input.as_deref())?;
            common.create_out_dir(Stage::Extract)?;
            let (out, record) = extract_raw(&raw, &config.extraction)?;
            write_bits(&common.out(EXTRACTED_FILE), &out, Stage::Extract)?;
            write_json(&common.out(EXTRACTION_FILE), &record, Stage::Extract)?;
            print_json(&record);
        }
        Command::Test { common, input } => {
            let config = common.pipeline_config()?;
            let bits = extracted_bits(&common, input.as_deref(), Stage::Test)?;
            common.create_out_dir(Stage::Test)?;
            let record = run_tests(&bits, &config.stats)?;
            write_json(&common.out(TESTS_FILE), &record, Stage::Test)?;
            if let Some(note) = &record.skipped {
                println!("({note})");
            }
            print!("{}", report_text(&record.reports));
        }
        Command::Image {
            common,
            input,
            width,
            height,
        } => {
            let bits = extracted_bits(&common, input.as_deref(), Stage::Image)?;
            let pgm = bits_to_image(&bits, width, height).map_err(|e| StageError::new(Stage::Image, e))?;
            common.create_out_dir(Stage::Image)?;
            std::fs::write(common.out(IMAGE_FILE), pgm).map_err(|e| StageError::new(Stage::Image, e))?;
            println!("{}", common.out(IMAGE_FILE).display());
        }
        Command::Stream { common } => {
            let config = common.pipeline_config()?;
            let endpoint = common
                .endpoint
                .clone()
                .ok_or_else(|| StageError::new(Stage::Config, "stream needs --endpoint"))?;
            let sim = simulate(&config)?;
            let options = StreamOptions {
                max_datagrams_per_sec: config.transport.max_datagrams_per_sec,
                faults: config.transport.faults,
            };
            let sent =
                stream_device(&sim.blocks, &endpoint, &options).map_err(|e| StageError::new(Stage::Transport, e))?;
            print_json(&sent);
        }
        Command::Serve {
            common,
            expected,
            idle_timeout,
        } => {
            let endpoint = common
                .endpoint
                .clone()
                .ok_or_else(|| StageError::new(Stage::Config, "serve needs --endpoint"))?;
            if !(idle_timeout > 0.0 && idle_timeout.is_finite()) {
                return Err(StageError::new(Stage::Config, "idle timeout must be positive"));
            }
            let options = ServeOptions {
                idle_timeout: Duration::from_secs_f64(idle_timeout),
                expected_blocks: expected,
                ..ServeOptions::default()
            };
            let stats = serve_collect(&endpoint, &common.out_dir, &options)
                .map_err(|e| StageError::new(Stage::Transport, e))?;
            print_json(&stats);
        }
        Command::Report { common } => {
            let summary = load_summary(&common.out_dir)?;
            emit_report(&summary, &common.out_dir)?;
            print!("{}", summary.to_text());
        }
        Command::Bench { common, min_rate } => {
            let config = common.pipeline_config()?;
            let report = benchmark(&config, common.blocks.unwrap_or(200))?;
            print_json(&report);
            if let Some(floor) = min_rate {
                if report.raw_rate < floor {
                    return Err(StageError::new(
                        Stage::Simulate,
                        format!("raw rate {:.0} bit/s is below {floor:.0}", report.raw_rate),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.stage == Stage::Config { 2 } else { 1 })
        }
    }
}
