//! Seed derivation. Every stochastic stage draws from a ChaCha stream whose
//! seed is a pure function of the run seed and the stage coordinates, so
//! results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit hash of a sequence of words.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(words.len() as u64), |acc, &w| mix64(acc ^ mix64(w)))
}

/// Seed for the augmentation stream of one sample in one epoch.
pub fn stream_seed(global_seed: u64, sample_id: u64, epoch: u64) -> u64 {
    hash_words(&[global_seed, sample_id, epoch])
}

/// Deterministic generator for an arbitrary tuple of coordinates.
pub fn rng_for(words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_words(words))
}

// Stage tags keep streams of different stages apart even when the
// remaining coordinates coincide.
pub(crate) const TAG_SPLIT: u64 = 0x5350_4C49_54;
pub(crate) const TAG_INIT: u64 = 0x494E_4954;
pub(crate) const TAG_EPOCH: u64 = 0x4550_4F43_48;
pub(crate) const TAG_BOOTSTRAP: u64 = 0x424F_4F54;
pub(crate) const TAG_SYNTH: u64 = 0x5359_4E54_48;
pub(crate) const TAG_ELASTIC: u64 = 0x454C_4153;
pub(crate) const TAG_CUTOUT: u64 = 0x4355_544F;
pub(crate) const TAG_FLIP: u64 = 0x464C_4950;
