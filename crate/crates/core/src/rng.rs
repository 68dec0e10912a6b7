//! The pinned pseudo-random generator behind split generation.
//!
//! Split files must be reproducible bit-for-bit by any implementation, so the
//! generator is a fixed 64-bit LCG rather than a library RNG whose stream may
//! change between versions.

const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const INCREMENT: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Clone)]
pub struct SplitRng {
    state: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng { state: seed ^ SEED_MIX }
    }

    /// Advances the state once and returns its upper 32 bits.
    pub fn next_u32(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform-ish index in `0..bound` (modulo reduction; `bound` ≥ 1).
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound >= 1);
        (self.next_u32() as u64 % bound as u64) as usize
    }

    /// In-place Fisher–Yates: for i from n-1 down to 1, swap i with `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
