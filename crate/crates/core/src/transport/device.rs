use std::borrow::Borrow;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_frame, resolve, TransportError};
use crate::protocol::BitBlock;

/// Deliberate link faults, for exercising the loss accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    /// Probability that a block's datagram is never sent.
    pub drop_rate: f64,
    /// Probability that a sent block is followed by an extra copy with one
    /// flipped bit.
    pub corrupt_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamOptions {
    /// Datagram rate cap; 0 sends as fast as the socket accepts.
    pub max_datagrams_per_sec: f64,
    pub faults: Option<FaultConfig>,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            max_datagrams_per_sec: 5_000.0,
            faults: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SendStats {
    /// Datagrams put on the wire, corrupted copies included.
    pub sent: u64,
    pub bytes: u64,
    pub dropped_ids: Vec<u64>,
    pub corrupted_ids: Vec<u64>,
}

/// Sends one datagram per block, in order.
pub fn stream_device<I>(blocks: I, endpoint: &str, options: &StreamOptions) -> Result<SendStats, TransportError>
where
    I: IntoIterator,
    I::Item: Borrow<BitBlock>,
{
    let target = resolve(endpoint)?;
    let local: SocketAddr = if target.is_ipv4() {
        "0.0.0.0:0".parse().expect("literal")
    } else {
        "[::]:0".parse().expect("literal")
    };
    let socket = UdpSocket::bind(local).map_err(TransportError::Socket)?;
    let mut faults = options.faults.map(|f| (f, ChaCha8Rng::seed_from_u64(f.seed)));
    let interval = (options.max_datagrams_per_sec > 0.0)
        .then(|| Duration::from_secs_f64(1.0 / options.max_datagrams_per_sec));
    let start = Instant::now();
    let mut stats = SendStats::default();

    let send = |bytes: &[u8], block_id: u64, stats: &mut SendStats| -> Result<(), TransportError> {
        if let Some(step) = interval {
            let due = start + step.mul_f64(stats.sent as f64);
            loop {
                let now = Instant::now();
                if now >= due {
                    break;
                }
                let wait = due - now;
                if wait > Duration::from_micros(300) {
                    std::thread::sleep(wait - Duration::from_micros(200));
                } else {
                    // yield rather than spin so a receiver on the same core keeps up
                    std::thread::yield_now();
                }
            }
        }
        socket
            .send_to(bytes, target)
            .map_err(|source| TransportError::Send { block_id, source })?;
        stats.sent += 1;
        stats.bytes += bytes.len() as u64;
        Ok(())
    };

    for block in blocks {
        let block = block.borrow();
        let frame = encode_frame(block)?;
        if let Some((cfg, rng)) = faults.as_mut() {
            if rng.random::<f64>() < cfg.drop_rate {
                stats.dropped_ids.push(block.block_id);
                continue;
            }
            send(&frame, block.block_id, &mut stats)?;
            if rng.random::<f64>() < cfg.corrupt_rate {
                let mut bad = frame.clone();
                let bit = rng.random_range(0..bad.len() * 8);
                bad[bit / 8] ^= 0x80 >> (bit % 8);
                send(&bad, block.block_id, &mut stats)?;
                stats.corrupted_ids.push(block.block_id);
            }
        } else {
            send(&frame, block.block_id, &mut stats)?;
        }
    }
    Ok(stats)
}
