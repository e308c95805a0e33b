//! Seeded random streams.
//!
//! Two generators are used. Corpus splitting uses SplitMix64 with a plain
//! modulo Fisher–Yates so that splits can be reproduced by any
//! implementation from the seed alone. Everything else (synthetic data,
//! initialization, batch order, sampling) draws from ChaCha8 streams derived
//! from a base seed and a stream index.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::SplitMix64;

/// Mix a base seed with a stream index into an independent 64-bit seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut mixer = SplitMix64::seed_from_u64(base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    mixer.next_u64()
}

pub fn stream(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// In-place Fisher–Yates shuffle driven by SplitMix64.
///
/// For `i` from `len - 1` down to 1, swap `i` with `next_u64() % (i + 1)`.
pub fn fisher_yates<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Stream indices reserved for the pipeline stages.
pub mod streams {
    pub const SYNTH_LABELED: u64 = 1;
    pub const SYNTH_UNLABELED: u64 = 2;
    pub const CBOW: u64 = 3;
    pub const SEARCH: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BATCHES: u64 = 7;
    pub const TRIALS: u64 = 1_000;
}
