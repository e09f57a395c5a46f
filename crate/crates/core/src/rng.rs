//! Seeded random streams.
//!
//! Every randomized operation in the crate takes a [`SeedStream`] explicitly.
//! A stream is a ChaCha8 generator keyed by a 64-bit seed and a 64-bit stream
//! id, so one seed can feed several independent consumers (skeleton jitter,
//! leaf placement, parameter jitter) without their draws interleaving.
//!
//! Seed splitting rule: child seeds for replications, trees and other indexed
//! items are `derive_seed(parent, index)`, a SplitMix64 finalizer applied to
//! `parent + (index + 1) * 0x9E3779B97F4A7C15`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of the `index`-th child of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Stream ids used inside a single tree build.
pub mod streams {
    pub const SKELETON: u64 = 0;
    pub const LEAVES: u64 = 1;
    pub const PARAMETERS: u64 = 2;
    pub const COUNT: u64 = 3;
    pub const POINTS: u64 = 4;
    pub const THINNING: u64 = 5;
}

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct SeedStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream with the same seed and a different stream id.
    pub fn substream(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            // Still consume a draw so stream alignment does not depend on the range.
            let _ = self.unit();
            return lo;
        }
        lo + (hi - lo) * self.unit()
    }

    /// Uniform draw on `[-half_width, half_width)`.
    pub fn symmetric(&mut self, half_width: f64) -> f64 {
        self.uniform(-half_width, half_width)
    }

    /// Standard exponential draw by inversion.
    pub fn exponential(&mut self) -> f64 {
        // 1 - u lies in (0, 1], so the logarithm is finite.
        -(1.0 - self.unit()).ln()
    }
}

impl RngCore for SeedStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
