use mdi_qrng::pipeline::{
    run_pipeline, PipelineConfig, Stage, TransportMode, EXTRACTED_FILE, SUMMARY_JSON, SUMMARY_TEXT,
};
use mdi_qrng::protocol::ProtocolConfig;
use mdi_qrng::stats::SuiteConfig;

fn small(seed: u64) -> PipelineConfig {
    PipelineConfig {
        blocks: 80,
        seed,
        protocol: ProtocolConfig {
            bias: 0.8,
            ..ProtocolConfig::default()
        },
        stats: SuiteConfig {
            tests: Vec::new(),
            ..SuiteConfig::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn default_run_reproduces_headline_figures() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        seed: 11,
        ..PipelineConfig::default()
    };
    let summary = run_pipeline(&config, dir.path()).unwrap();
    let cert = &summary.certificate;
    let avg = cert.averaged.unwrap();
    assert!((avg.p_suc - 0.97).abs() < 0.005, "{avg:?}");
    assert!((cert.h_min - 0.71).abs() <= 0.02, "{cert:?}");
    assert!(summary.tests.reports.len() == 11 && summary.tests.all_passed());

    // stable for the first 8 days, then a monotone decline
    let table = &summary.simulation.rate_table;
    let first = table[0].rate;
    for b in table.iter().filter(|b| b.end_day <= 8.0) {
        assert!((b.rate / first - 1.0).abs() < 0.005, "{b:?}");
    }
    let late: Vec<f64> = table.iter().filter(|b| b.start_day >= 8.0).map(|b| b.rate).collect();
    assert!(late.len() > 40);
    assert!(late.windows(2).all(|w| w[1] < w[0]), "{late:?}");
    assert!(late[late.len() - 1] < 0.6 * first);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_JSON)).unwrap()).unwrap();
    for key in [
        "raw_rate",
        "discard_rate",
        "p_suc_h",
        "p_suc_v",
        "p_suc",
        "h_min",
        "certificate",
        "rate_table",
        "tests",
        "extraction",
    ] {
        assert!(!json[key].is_null(), "missing {key}");
    }
    assert!(std::fs::read_to_string(dir.path().join(SUMMARY_TEXT)).unwrap().contains("H_min"));
}

#[test]
fn loopback_transport_is_transparent() {
    let direct = tempfile::tempdir().unwrap();
    let looped = tempfile::tempdir().unwrap();
    let a = run_pipeline(&small(5), direct.path()).unwrap();
    let mut config = small(5);
    config.transport.mode = TransportMode::Loopback;
    let b = run_pipeline(&config, looped.path()).unwrap();

    let t = b.simulation.transport.as_ref().unwrap();
    assert_eq!(t.ingest.valid, 80);
    assert!(t.ingest.gaps.is_empty());
    assert_eq!(a.certificate, b.certificate);
    assert_eq!(a.simulation.statistics, b.simulation.statistics);
    assert_eq!(
        std::fs::read(direct.path().join(EXTRACTED_FILE)).unwrap(),
        std::fs::read(looped.path().join(EXTRACTED_FILE)).unwrap()
    );
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&small(1), a.path()).unwrap();
    run_pipeline(&small(2), b.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(EXTRACTED_FILE)).unwrap(),
        std::fs::read(b.path().join(EXTRACTED_FILE)).unwrap()
    );
}

#[test]
fn extraction_failure_is_stage_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small(3);
    config.protocol.block_bits = 8;
    let e = run_pipeline(&config, dir.path()).unwrap_err();
    assert_eq!(e.stage, Stage::Extract, "{e}");
}
