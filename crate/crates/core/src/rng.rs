//! SplitMix64, the one PRNG behind every stochastic choice in the crate.
//!
//! The recurrence is fixed so that seeded streams are reproducible bit for bit
//! on any platform and from any language binding.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        lo + self.next_f64() * (hi - lo)
    }

    /// Unbiased index in `0..n`. Draws above the largest multiple of `n` are
    /// rejected and redrawn.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n >= 1, "range requires n >= 1");
        let n = n as u64;
        // 2^64 mod n, computed without overflow.
        let reject_below = n.wrapping_neg() % n;
        loop {
            let v = self.next_u64();
            if v >= reject_below {
                return (v % n) as usize;
            }
        }
    }

    /// Fair coin: `true` with probability one half.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Integer uniform on the closed interval `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.range(hi - lo + 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i + 1);
            items.swap(i, j);
        }
    }
}

/// Seed for an independent stream `stream_id` under `root`.
pub fn derive_seed(root: u64, stream_id: u64) -> u64 {
    Rng::new(root ^ stream_id.wrapping_mul(GOLDEN_GAMMA)).next_u64()
}
