//! Seeded random streams.
//!
//! Everything stochastic in the crate draws from [`SimRng`], a ChaCha8 generator keyed by
//! a `u64` seed plus a stream id. Distinct stream ids give independent sequences from the
//! same seed, which is how realization `i` of an evaluation gets its own demand path no
//! matter which policy is being evaluated (common random numbers).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Generator for stream `stream` of a seed derived from `(seed, key)`. Used where a
    /// second index (a training epoch, say) must select an independent family of streams.
    pub fn keyed(seed: u64, key: u64, stream: u64) -> Self {
        Self::with_stream(splitmix64(seed ^ splitmix64(key)), stream)
    }

    /// Derive a child generator for sub-stream `stream`, keyed by this generator's next output.
    pub fn fork(&mut self, stream: u64) -> Self {
        Self::with_stream(self.inner.next_u64(), stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Unbiased integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
