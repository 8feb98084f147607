use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, Socket, Type};

use super::{decode_frame, resolve, TransportError, MAX_FRAME_LEN};
use crate::bits::Bits;
use crate::protocol::BlockKind;

pub const GENERATE_FILE: &str = "generate.bits";
pub const TEST_H_FILE: &str = "test_h.log";
pub const TEST_V_FILE: &str = "test_v.log";
pub const STATUS_FILE: &str = "status.json";
pub const LEDGER_FILE: &str = "ledger.json";

const RECEIVE_BUFFER: usize = 4 << 20;
const POLL: Duration = Duration::from_millis(50);
/// Quiet period after the last expected block, to count trailing copies.
const DRAIN: Duration = Duration::from_millis(150);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Stop after this long without a datagram.
    pub idle_timeout: Duration,
    /// When known, ids up to `expected_blocks − 1` missing at shutdown are
    /// recorded as gaps, and ingest stops as soon as all have arrived.
    pub expected_blocks: Option<u64>,
    /// Refresh `status.json` every this many datagrams.
    pub status_every: u64,
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            idle_timeout: Duration::from_secs(2),
            expected_blocks: None,
            status_every: 100,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub datagrams: u64,
    pub bytes: u64,
    pub valid: u64,
    pub invalid: u64,
    pub invalid_by_kind: BTreeMap<String, u64>,
    pub duplicates: u64,
    pub duplicate_ids: Vec<u64>,
    /// Block ids never received below the highest id seen (or the expected count).
    pub gaps: Vec<u64>,
    pub highest_block_id: Option<u64>,
    pub generate_frames: u64,
    pub generate_bits: u64,
    pub test_h_frames: u64,
    pub test_h_bits: u64,
    pub test_v_frames: u64,
    pub test_v_bits: u64,
}

/// Read-only view of the ingest statistics for other threads, refreshed
/// together with the status file.
#[derive(Debug, Clone)]
pub struct StatsHandle(Arc<Mutex<IngestStats>>);

impl StatsHandle {
    pub fn snapshot(&self) -> IngestStats {
        self.0.lock().expect("stats lock").clone()
    }
}

/// One line of `test_h.log` / `test_v.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLogRecord {
    pub block_id: u64,
    pub bits: usize,
    pub ones: usize,
    /// Payload bytes, MSB-first, as lowercase hex.
    pub payload: String,
}

impl TestLogRecord {
    pub fn new(block_id: u64, payload: &Bits) -> Self {
        TestLogRecord {
            block_id,
            bits: payload.len(),
            ones: payload.count_ones(),
            payload: payload.to_bytes().iter().map(|b| format!("{b:02x}")).collect(),
        }
    }

    pub fn payload_bits(&self) -> Option<Bits> {
        let bytes: Option<Vec<u8>> = (0..self.payload.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(self.payload.get(i..i + 2)?, 16).ok())
            .collect();
        let bytes = bytes?;
        (self.bits <= bytes.len() * 8).then(|| Bits::from_bytes_len(&bytes, self.bits))
    }
}

/// Appends bit strings to a file without padding between them.
struct BitSink {
    out: BufWriter<File>,
    pending: Bits,
}

impl BitSink {
    fn append(&mut self, bits: &Bits) -> std::io::Result<()> {
        if self.pending.is_empty() && bits.len().is_multiple_of(8) {
            return self.out.write_all(&bits.to_bytes());
        }
        self.pending.extend_from_bits(bits);
        let whole = self.pending.len() / 8 * 8;
        if whole > 0 {
            let bytes = self.pending.slice(0, whole).to_bytes();
            self.out.write_all(&bytes)?;
            self.pending = self.pending.slice(whole, self.pending.len() - whole);
        }
        Ok(())
    }

    fn finish(&mut self) -> std::io::Result<()> {
        if !self.pending.is_empty() {
            self.out.write_all(&self.pending.to_bytes())?;
            self.pending = Bits::new();
        }
        self.out.flush()
    }
}

pub struct Server {
    socket: UdpSocket,
    storage: PathBuf,
    stats: Arc<Mutex<IngestStats>>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, TransportError> {
    File::create(dir.join(name))
        .map(|f| BufWriter::with_capacity(1 << 20, f))
        .map_err(TransportError::Storage)
}

fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<(), TransportError> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value).expect("plain data");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(TransportError::Storage)
}

impl Server {
    /// Binds the receive socket. Storage files are created when `run` starts.
    pub fn bind(endpoint: &str, storage_dir: impl Into<PathBuf>) -> Result<Self, TransportError> {
        let addr = resolve(endpoint)?;
        let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, Some(Protocol::UDP))
            .map_err(TransportError::Socket)?;
        // best effort; the kernel caps it at its configured maximum
        let _ = socket.set_recv_buffer_size(RECEIVE_BUFFER);
        socket.bind(&addr.into()).map_err(TransportError::Socket)?;
        Ok(Server {
            socket: socket.into(),
            storage: storage_dir.into(),
            stats: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        self.socket.local_addr().map_err(TransportError::Socket)
    }

    pub fn stats_handle(&self) -> StatsHandle {
        StatsHandle(Arc::clone(&self.stats))
    }

    pub fn run(self, options: &ServeOptions) -> Result<IngestStats, TransportError> {
        std::fs::create_dir_all(&self.storage).map_err(TransportError::Storage)?;
        let mut generate = BitSink {
            out: create(&self.storage, GENERATE_FILE)?,
            pending: Bits::new(),
        };
        let mut test_h = create(&self.storage, TEST_H_FILE)?;
        let mut test_v = create(&self.storage, TEST_V_FILE)?;
        self.socket
            .set_read_timeout(Some(POLL.min(options.idle_timeout).max(Duration::from_millis(1))))
            .map_err(TransportError::Socket)?;

        let mut missing: BTreeSet<u64> = BTreeSet::new();
        let mut buf = vec![0u8; MAX_FRAME_LEN + 64];
        let mut last_activity = Instant::now();
        let status_every = options.status_every.max(1);
        let mut local = IngestStats::default();

        loop {
            if options.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
                break;
            }
            let complete = options
                .expected_blocks
                .is_some_and(|n| local.highest_block_id.map_or(n == 0, |h| h + 1 >= n) && missing.is_empty());
            let idle_limit = if complete { DRAIN.min(options.idle_timeout) } else { options.idle_timeout };
            let len = match self.socket.recv(&mut buf) {
                Ok(len) => len,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    if last_activity.elapsed() >= idle_limit {
                        break;
                    }
                    continue;
                }
                Err(e) => return Err(TransportError::Receive(e)),
            };
            last_activity = Instant::now();
            local.datagrams += 1;
            local.bytes += len as u64;

            match decode_frame(&buf[..len]) {
                Err(e) => {
                    local.invalid += 1;
                    *local.invalid_by_kind.entry(e.kind().to_string()).or_default() += 1;
                }
                Ok(frame) => {
                    let id = frame.block_id;
                    let fresh = match local.highest_block_id {
                        None => {
                            missing.extend(0..id);
                            true
                        }
                        Some(h) if id > h => {
                            missing.extend(h + 1..id);
                            true
                        }
                        Some(_) => missing.remove(&id),
                    };
                    if !fresh {
                        local.duplicates += 1;
                        local.duplicate_ids.push(id);
                    } else {
                        local.highest_block_id = Some(local.highest_block_id.map_or(id, |h| h.max(id)));
                        local.valid += 1;
                        let bits = frame.payload.len() as u64;
                        let io = match frame.kind {
                            BlockKind::Generate => {
                                local.generate_frames += 1;
                                local.generate_bits += bits;
                                generate.append(&frame.payload)
                            }
                            BlockKind::TestH | BlockKind::TestV => {
                                let (file, frames, total) = if frame.kind == BlockKind::TestH {
                                    (&mut test_h, &mut local.test_h_frames, &mut local.test_h_bits)
                                } else {
                                    (&mut test_v, &mut local.test_v_frames, &mut local.test_v_bits)
                                };
                                *frames += 1;
                                *total += bits;
                                let line = serde_json::to_string(&TestLogRecord::new(id, &frame.payload))
                                    .expect("plain data");
                                writeln!(file, "{line}")
                            }
                        };
                        io.map_err(TransportError::Storage)?;
                    }
                }
            }
            if local.datagrams % status_every == 0 {
                local.gaps = missing.iter().copied().collect();
                *self.stats.lock().expect("stats lock") = local.clone();
                write_json_atomic(&self.storage.join(STATUS_FILE), &local)?;
            }
        }

        generate.finish().map_err(TransportError::Storage)?;
        test_h.flush().map_err(TransportError::Storage)?;
        test_v.flush().map_err(TransportError::Storage)?;

        if let Some(n) = options.expected_blocks {
            let from = local.highest_block_id.map_or(0, |h| h + 1);
            missing.extend(from..n);
        }
        local.gaps = missing.into_iter().collect();
        *self.stats.lock().expect("stats lock") = local.clone();
        write_json_atomic(&self.storage.join(STATUS_FILE), &local)?;
        write_json_atomic(
            &self.storage.join(LEDGER_FILE),
            &serde_json::json!({ "gaps": local.gaps, "duplicates": local.duplicate_ids }),
        )?;
        Ok(local)
    }
}

/// Binds `endpoint` and ingests until idle, stopped, or complete.
pub fn serve_collect(
    endpoint: &str,
    storage_dir: impl Into<PathBuf>,
    options: &ServeOptions,
) -> Result<IngestStats, TransportError> {
    Server::bind(endpoint, storage_dir)?.run(options)
}

/// Reads one of the test-state logs back.
pub fn read_test_log(path: &Path) -> std::io::Result<Vec<TestLogRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}
