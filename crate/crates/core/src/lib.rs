#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Measurement-device-independent quantum random number generation toolkit.
//!
//! The crate covers the whole chain of a prepare-and-measure MDI QRNG: a
//! seedable simulator of the weak-coherent source and the untrusted
//! measurement box ([`optics`]), the block protocol with biased test rounds
//! ([`protocol`]), certification of private min-entropy from test statistics
//! ([`certify`]), Toeplitz-hashing extraction ([`extract`]), a statistical test
//! battery ([`stats`]), block streaming over UDP ([`transport`]) and the
//! end-to-end orchestration used by the `qrng` binary ([`pipeline`]).

pub mod bits;
pub mod certify;
mod error;
pub mod extract;
pub mod optics;
pub mod pipeline;
pub mod protocol;
pub mod stats;
pub mod transport;

pub use bits::Bits;
pub use error::{Error, Result};
