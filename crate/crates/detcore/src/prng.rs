//! Fixed, fully specified pseudo-random generator.
//!
//! The generator is xoshiro256++ (Blackman and Vigna). A 64-bit seed is
//! expanded into the 256-bit state by four successive SplitMix64 outputs.
//! Every constant below is part of the reproducibility contract: changing
//! any of them changes every recorded output.

use serde::{Deserialize, Serialize};

/// SplitMix64 increment (the 64-bit golden ratio).
pub const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// First SplitMix64 finalizer multiplier.
pub const SPLITMIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
/// Second SplitMix64 finalizer multiplier.
pub const SPLITMIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;

/// One SplitMix64 step: advances `state` and returns the mixed output.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MUL2);
    z ^ (z >> 31)
}

/// Generator state plus the number of outputs drawn so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrngState {
    s: [u64; 4],
    steps: u64,
}

impl PrngState {
    /// Expands `seed` with SplitMix64 into a xoshiro256++ state.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for word in s.iter_mut() {
            *word = splitmix64(&mut sm);
        }
        // xoshiro must never hold the all-zero state.
        if s == [0; 4] {
            s[0] = 1;
        }
        Self { s, steps: 0 }
    }

    /// Builds a state from raw words. Returns `None` for the all-zero state.
    pub fn from_words(s: [u64; 4]) -> Option<Self> {
        (s != [0; 4]).then_some(Self { s, steps: 0 })
    }

    pub fn words(&self) -> [u64; 4] {
        self.s
    }

    /// Number of outputs drawn since seeding.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Draws one output in place.
    #[inline]
    pub fn step(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        self.steps += 1;
        result
    }

    /// Value-passing form of [`PrngState::step`].
    pub fn next_u64(mut self) -> (u64, Self) {
        let x = self.step();
        (x, self)
    }

    /// Uniform draw in `(0, 1]` with 24 bits of resolution.
    ///
    /// The lower bound is open so that the cumulative selection rule can
    /// never land on a zero-probability token at index 0.
    pub fn next_unit(self) -> (f32, Self) {
        let (x, next) = self.next_u64();
        (unit_from_bits(x), next)
    }

    /// Uniform draw in `[0, 1)` with 24 bits of resolution, in place.
    pub fn unit_f32(&mut self) -> f32 {
        ((self.step() >> 40) as f32) * TWO_POW_NEG_24
    }

    /// Unbiased uniform integer in `[0, bound)` (Lemire's method).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.step()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }
}

const TWO_POW_NEG_24: f32 = 1.0 / 16_777_216.0;

#[inline]
fn unit_from_bits(x: u64) -> f32 {
    (((x >> 40) + 1) as f32) * TWO_POW_NEG_24
}
