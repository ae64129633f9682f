//! Seed plumbing.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` built here from an
//! explicit 64-bit seed and a named stream. Distinct streams of the same seed
//! are independent, so changing how many numbers one component consumes never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams used by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Pool = 3,
    Init = 4,
    Train = 5,
    Acquire = 6,
    Bounds = 7,
}

/// Generator for `seed` on `stream`, further split by `substream`
/// (cycle number, trial index, ...).
pub fn rng(seed: u64, stream: Stream, substream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, substream));
    rng.set_stream(stream as u64);
    rng
}

/// Plain generator for a single seed, used by standalone operations
/// (`init_network`, generators) that only receive one seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed; used where an API takes a plain `u64` seed.
pub fn derive(seed: u64, stream: Stream, substream: u64) -> u64 {
    mix(mix(seed, stream as u64), substream)
}

// splitmix64 finalizer over (a, b).
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
