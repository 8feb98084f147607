//! Device→server block streaming: the frame format, a paced UDP sender with
//! optional fault injection, and the per-state ingest server.
//!
//! Frame layout, all integers big-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `51 52 4E 47` |
//! | 1 | version = 1 |
//! | 8 | block_id |
//! | 1 | state label: 0 TestH, 1 TestV, 2 Generate |
//! | 4 | payload_bit_len ≤ 65536 |
//! | ⌈bits/8⌉ | payload, MSB-first |
//! | 4 | CRC-32 over everything above |

mod device;
mod server;

pub use device::{stream_device, FaultConfig, SendStats, StreamOptions};
pub use server::{
    read_test_log, serve_collect, IngestStats, ServeOptions, Server, StatsHandle, TestLogRecord, GENERATE_FILE,
    LEDGER_FILE, STATUS_FILE, TEST_H_FILE, TEST_V_FILE,
};

use std::io;
use std::net::{SocketAddr, ToSocketAddrs};

use thiserror::Error;

use crate::bits::Bits;
use crate::error::{invalid, Result};
use crate::protocol::{BitBlock, BlockKind, BLOCK_BITS};

pub const MAGIC: [u8; 4] = [0x51, 0x52, 0x4E, 0x47];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const CRC_LEN: usize = 4;
pub const MAX_PAYLOAD_BITS: usize = BLOCK_BITS;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_PAYLOAD_BITS / 8 + CRC_LEN;

/// A decoded datagram. The wire carries no timestamp, so this is a
/// [`BitBlock`] without `produced_at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub block_id: u64,
    pub kind: BlockKind,
    pub payload: Bits,
}

impl Frame {
    pub fn into_block(self, produced_at: f64) -> BitBlock {
        BitBlock {
            block_id: self.block_id,
            kind: self.kind,
            bits: self.payload,
            produced_at,
        }
    }
}

impl From<&BitBlock> for Frame {
    fn from(b: &BitBlock) -> Self {
        Frame {
            block_id: b.block_id,
            kind: b.kind,
            payload: b.bits.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown state label {0}")]
    BadLabel(u8),
    #[error("payload length {declared} bits does not match a {len}-byte frame")]
    BadLength { declared: usize, len: usize },
    #[error("CRC mismatch: frame says {expected:08x}, computed {computed:08x}")]
    BadCrc { expected: u32, computed: u32 },
}

impl FrameError {
    /// Stable short name for counters and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            FrameError::Truncated { .. } => "truncated",
            FrameError::BadMagic(_) => "bad_magic",
            FrameError::BadVersion(_) => "bad_version",
            FrameError::BadLabel(_) => "bad_label",
            FrameError::BadLength { .. } => "bad_length",
            FrameError::BadCrc { .. } => "bad_crc",
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot resolve endpoint {endpoint}: {source}")]
    Endpoint { endpoint: String, source: io::Error },
    #[error("socket setup failed: {0}")]
    Socket(io::Error),
    #[error("send failed at block {block_id}: {source}")]
    Send { block_id: u64, source: io::Error },
    #[error("receive failed: {0}")]
    Receive(io::Error),
    #[error("storage write failed: {0}")]
    Storage(io::Error),
    #[error(transparent)]
    Encode(#[from] crate::Error),
}

fn resolve(endpoint: &str) -> std::result::Result<SocketAddr, TransportError> {
    endpoint
        .to_socket_addrs()
        .and_then(|mut it| {
            it.next()
                .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address"))
        })
        .map_err(|source| TransportError::Endpoint {
            endpoint: endpoint.to_string(),
            source,
        })
}

pub fn encode_frame(block: &BitBlock) -> Result<Vec<u8>> {
    let bits = block.bits.len();
    if bits > MAX_PAYLOAD_BITS {
        return Err(invalid(format!(
            "payload of {bits} bits exceeds the {MAX_PAYLOAD_BITS}-bit frame limit"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + bits.div_ceil(8) + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&block.block_id.to_be_bytes());
    out.push(block.kind.label());
    out.extend_from_slice(&(bits as u32).to_be_bytes());
    out.extend_from_slice(&block.bits.to_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> std::result::Result<Frame, FrameError> {
    let min = HEADER_LEN + CRC_LEN;
    if bytes.len() < min {
        return Err(FrameError::Truncated {
            needed: min,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(FrameError::BadVersion(bytes[4]));
    }
    let block_id = u64::from_be_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let kind = BlockKind::from_label(bytes[13]).ok_or(FrameError::BadLabel(bytes[13]))?;
    let declared = u32::from_be_bytes(bytes[14..18].try_into().expect("4 bytes")) as usize;
    if declared > MAX_PAYLOAD_BITS {
        return Err(FrameError::BadLength {
            declared,
            len: bytes.len(),
        });
    }
    let total = HEADER_LEN + declared.div_ceil(8) + CRC_LEN;
    if bytes.len() < total {
        return Err(FrameError::Truncated {
            needed: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(FrameError::BadLength {
            declared,
            len: bytes.len(),
        });
    }
    let body = &bytes[..total - CRC_LEN];
    let expected = u32::from_be_bytes(bytes[total - CRC_LEN..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if expected != computed {
        return Err(FrameError::BadCrc { expected, computed });
    }
    Ok(Frame {
        block_id,
        kind,
        payload: Bits::from_bytes_len(&body[HEADER_LEN..], declared),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bitwise reflected CRC-32, polynomial 0x04C11DB7 (0xEDB88320 reflected).
    fn reference_crc32(data: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &byte in data {
            crc ^= u32::from(byte);
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    fn block(id: u64, kind: BlockKind, bits: Bits) -> BitBlock {
        BitBlock {
            block_id: id,
            kind,
            bits,
            produced_at: 0.0,
        }
    }

    #[test]
    fn reference_crc_check_value() {
        assert_eq!(reference_crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn empty_generate_frame() {
        let f = encode_frame(&block(0, BlockKind::Generate, Bits::new())).unwrap();
        assert_eq!(f.len(), 22);
        let mut head = vec![0x51, 0x52, 0x4E, 0x47, 0x01];
        head.extend_from_slice(&[0; 8]);
        head.push(0x02);
        head.extend_from_slice(&[0; 4]);
        assert_eq!(&f[..18], &head[..]);
        assert_eq!(&f[18..], &reference_crc32(&head).to_be_bytes());
    }

    #[test]
    fn beef_frame_golden() {
        let f = encode_frame(&block(1, BlockKind::TestH, Bits::from_bytes(&[0xBE, 0xEF]))).unwrap();
        let mut body = vec![0x51, 0x52, 0x4E, 0x47, 0x01, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 16, 0xBE, 0xEF];
        let crc = reference_crc32(&body);
        body.extend_from_slice(&crc.to_be_bytes());
        assert_eq!(f, body);
        let d = decode_frame(&f).unwrap();
        assert_eq!((d.block_id, d.kind), (1, BlockKind::TestH));
        assert_eq!(d.payload.to_bytes(), vec![0xBE, 0xEF]);
    }

    #[test]
    fn full_block_size() {
        let f = encode_frame(&block(9, BlockKind::Generate, Bits::zeros(BLOCK_BITS))).unwrap();
        assert_eq!(f.len(), MAX_FRAME_LEN);
        assert_eq!(MAX_FRAME_LEN, 8214);
        assert!(encode_frame(&block(9, BlockKind::Generate, Bits::zeros(BLOCK_BITS + 1))).is_err());
    }

    #[test]
    fn typed_errors() {
        let good = encode_frame(&block(5, BlockKind::TestV, Bits::parse01("1011001").unwrap())).unwrap();
        assert!(matches!(decode_frame(&good[..3]), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode_frame(&good[..good.len() - 1]), Err(FrameError::Truncated { .. })));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_frame(&bad), Err(FrameError::BadVersion(2)));
        let mut bad = good.clone();
        bad[13] = 7;
        assert_eq!(decode_frame(&bad), Err(FrameError::BadLabel(7)));
        let mut bad = good.clone();
        bad[18] ^= 0x01;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadCrc { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadLength { .. })));
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let good = encode_frame(&block(77, BlockKind::Generate, Bits::from_bytes(&[0x5A; 40]))).unwrap();
        for bit in 0..good.len() * 8 {
            let mut bad = good.clone();
            bad[bit / 8] ^= 0x80 >> (bit % 8);
            assert!(decode_frame(&bad).is_err(), "flip at bit {bit} accepted");
        }
    }

    proptest! {
        #[test]
        fn roundtrip(id in any::<u64>(), label in 0u8..3, bytes in proptest::collection::vec(any::<u8>(), 0..1024), trim in 0usize..8) {
            let len = (bytes.len() * 8).saturating_sub(trim);
            let b = block(id, BlockKind::from_label(label).unwrap(), Bits::from_bytes_len(&bytes, len));
            let enc = encode_frame(&b).unwrap();
            prop_assert_eq!(enc.len(), 22 + len.div_ceil(8));
            prop_assert_eq!(u32::from_be_bytes(enc[enc.len() - 4..].try_into().unwrap()), reference_crc32(&enc[..enc.len() - 4]));
            let f = decode_frame(&enc).unwrap();
            prop_assert_eq!(f.into_block(0.0), b);
        }
    }
}
