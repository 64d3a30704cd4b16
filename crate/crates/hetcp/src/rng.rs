//! Deterministic counter-based random number generation.
//!
//! Every stochastic component in this crate draws from [`RngStream`], a
//! SplitMix64-style counter generator: the state is a 64-bit counter that
//! advances by a fixed odd increment and is finalized with the Stafford
//! "mix13" permutation. The same `(seed, stream)` pair therefore yields the
//! same draw sequence on every platform, and disjoint stream ids give
//! statistically independent substreams for parallel work.

use crate::dist::normal_quantile;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stafford variant 13 of the SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single stream of the counter generator.
///
/// Streams are cheap value types; clone one to replay a sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let counter = mix64(seed ^ 0x6A09_E667_F3BC_C909) ^ mix64(stream.wrapping_mul(GOLDEN_GAMMA));
        RngStream {
            seed,
            stream,
            counter,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives an independent stream for parallel work; the derivation only
    /// depends on `(seed, stream, id)`, never on how many draws were taken.
    pub fn substream(&self, id: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream.wrapping_add(1)).wrapping_add(id))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN_GAMMA);
        mix64(self.counter)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in the open interval `(0, 1)`; safe to feed into inverse
    /// distribution functions.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via the inverse CDF, so the sequence is a pure
    /// function of the counter.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.next_open01())
    }

    /// Unbiased integer draw in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
