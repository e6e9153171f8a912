//! Seedable counter-based random generator used everywhere randomness is
//! needed (dataset synthesis, mesh sampling, weight init, shuffling,
//! dropout masks).
//!
//! The generator is SplitMix64: a 64-bit counter advanced by a fixed odd
//! increment, hashed by two xor-shift-multiply rounds. It is stateless
//! beyond the counter, so streams are reproducible bit-for-bit on every
//! platform from the seed alone.

/// SplitMix64 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Resume a stream from a saved counter value.
    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    /// Current counter value, for checkpointing.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        // Modulo bias is negligible for the small n used here and keeps
        // the consumption rate at exactly one draw per call.
        self.next_u64() % n
    }

    /// Standard normal via Box-Muller. Consumes exactly two draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Derive an independent stream for a sub-task, keyed by `tag`.
    pub fn derive(&self, tag: u64) -> SplitMix64 {
        let mut mixer = SplitMix64::new(self.state ^ tag.wrapping_mul(0xd1342543de82ef95));
        SplitMix64::new(mixer.next_u64())
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
