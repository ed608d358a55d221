//! Deterministic RNG stream derivation.
//!
//! Every stochastic component (synthetic generator, sampler, augmentations,
//! parameter init) owns a ChaCha8 stream whose seed is mixed from a global
//! seed plus structural coordinates (patient index, epoch, sample index, ...).
//! Streams are therefore independent of evaluation order, which keeps
//! parallel execution reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period bijection on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an ordered list of components into one seed.
///
/// Stable across platforms and releases: the checkpoint format and the
/// synthetic cohort bytes both depend on it.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3; // pi fraction, arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Seeded ChaCha8 stream for the given coordinates.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Stream labels so call sites cannot collide by accident.
pub mod domain {
    pub const SYNTH_PATIENT: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const KFOLD: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}
