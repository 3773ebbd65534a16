//! Reproducible random streams.
//!
//! Every consumer of randomness gets its own `(seed, stream)` pair, so
//! drawing more numbers in one place never shifts the numbers seen anywhere
//! else. Streams are ChaCha8 keystreams: the seed selects the key, the stream
//! id selects the nonce.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Init = 2,
    Process = 3,
    Perturb = 4,
    Resample = 5,
}

/// Packs `(run, slot, purpose)` into one stream id.
///
/// `run` occupies the upper 32 bits, `slot` (typically the ensemble size)
/// the next 24, and the purpose the low byte.
pub fn stream_id(run: u64, slot: u64, purpose: Purpose) -> u64 {
    (run << 32) | ((slot & 0x00FF_FFFF) << 8) | purpose as u64
}

/// A deterministic generator identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
