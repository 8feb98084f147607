use std::thread;
use std::time::Duration;

use mdi_qrng::protocol::{BitBlock, BlockKind};
use mdi_qrng::transport::{
    read_test_log, stream_device, FaultConfig, ServeOptions, Server, StreamOptions, TransportError, GENERATE_FILE,
    LEDGER_FILE, TEST_H_FILE, TEST_V_FILE,
};
use mdi_qrng::Bits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blocks(n: u64, bits: usize, seed: u64) -> Vec<BitBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let kind = match rng.random_range(0..100) {
                0 => BlockKind::TestH,
                1 => BlockKind::TestV,
                _ => BlockKind::Generate,
            };
            let bytes: Vec<u8> = (0..bits.div_ceil(8)).map(|_| rng.random()).collect();
            BitBlock {
                block_id: id,
                kind,
                bits: Bits::from_bytes_len(&bytes, bits),
                produced_at: id as f64,
            }
        })
        .collect()
}

fn loopback(
    sent: &[BitBlock],
    opts: StreamOptions,
    dir: &std::path::Path,
) -> (mdi_qrng::transport::SendStats, mdi_qrng::transport::IngestStats) {
    let server = Server::bind("127.0.0.1:0", dir).unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let serve = ServeOptions {
        idle_timeout: Duration::from_secs(2),
        expected_blocks: Some(sent.len() as u64),
        ..ServeOptions::default()
    };
    let handle = thread::spawn(move || server.run(&serve).unwrap());
    thread::sleep(Duration::from_millis(50));
    let stats = stream_device(sent, &addr, &opts).unwrap();
    (stats, handle.join().unwrap())
}

#[test]
fn lossless_loopback_preserves_every_bit() {
    let dir = tempfile::tempdir().unwrap();
    let sent = blocks(10_000, 1000, 1);
    let (tx, rx) = loopback(&sent, StreamOptions::default(), dir.path());
    assert_eq!(tx.sent, 10_000);
    assert_eq!(rx.valid, 10_000);
    assert_eq!(rx.invalid, 0);
    assert!(rx.gaps.is_empty() && rx.duplicate_ids.is_empty());

    let mut generate = Bits::new();
    for b in sent.iter().filter(|b| b.kind == BlockKind::Generate) {
        generate.extend_from_bits(&b.bits);
    }
    let stored = std::fs::read(dir.path().join(GENERATE_FILE)).unwrap();
    assert_eq!(stored, generate.to_bytes());
    assert_eq!(rx.generate_bits as usize, generate.len());

    for (file, kind) in [(TEST_H_FILE, BlockKind::TestH), (TEST_V_FILE, BlockKind::TestV)] {
        let log = read_test_log(&dir.path().join(file)).unwrap();
        let expect: Vec<&BitBlock> = sent.iter().filter(|b| b.kind == kind).collect();
        assert_eq!(log.len(), expect.len());
        for (rec, b) in log.iter().zip(expect) {
            assert_eq!(rec.block_id, b.block_id);
            assert_eq!(rec.payload_bits().unwrap(), b.bits);
        }
    }
}

#[test]
fn faults_are_accounted_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let sent = blocks(2000, 512, 2);
    let opts = StreamOptions {
        faults: Some(FaultConfig {
            drop_rate: 0.02,
            corrupt_rate: 0.03,
            seed: 9,
        }),
        ..StreamOptions::default()
    };
    let (tx, rx) = loopback(&sent, opts, dir.path());
    assert!(!tx.dropped_ids.is_empty() && !tx.corrupted_ids.is_empty());
    assert_eq!(rx.gaps, tx.dropped_ids);
    assert_eq!(rx.valid, 2000 - tx.dropped_ids.len() as u64);
    // CRC-32 catches every single-bit flip
    assert_eq!(rx.invalid, tx.corrupted_ids.len() as u64);
    assert!(rx.duplicate_ids.is_empty());

    let ledger: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(LEDGER_FILE)).unwrap()).unwrap();
    assert_eq!(ledger["gaps"].as_array().unwrap().len(), tx.dropped_ids.len());
}

#[test]
fn resent_blocks_count_as_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let mut sent = blocks(50, 64, 3);
    sent.extend(sent[10..15].to_vec());
    let server = Server::bind("127.0.0.1:0", dir.path()).unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let serve = ServeOptions {
        idle_timeout: Duration::from_millis(400),
        ..ServeOptions::default()
    };
    let handle = thread::spawn(move || server.run(&serve).unwrap());
    thread::sleep(Duration::from_millis(50));
    stream_device(&sent, &addr, &StreamOptions::default()).unwrap();
    let rx = handle.join().unwrap();
    assert_eq!(rx.valid, 50);
    assert_eq!(rx.duplicate_ids, vec![10, 11, 12, 13, 14]);
}

#[test]
fn unreachable_endpoint_fails_at_first_block() {
    let sent = blocks(3, 8, 4);
    match stream_device(&sent, "127.0.0.1:0", &StreamOptions::default()) {
        Err(TransportError::Send { block_id, .. }) => assert_eq!(block_id, 0),
        other => panic!("expected a send error, got {other:?}"),
    }
    assert!(matches!(
        stream_device(&sent, "no-such-host.invalid:9", &StreamOptions::default()),
        Err(TransportError::Endpoint { .. })
    ));
}
