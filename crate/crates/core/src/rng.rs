//! Deterministic seed derivation.
//!
//! A single global seed is expanded into independent streams by mixing it with
//! a label: `derive(seed, label) = splitmix64(seed ^ fnv1a64(label))`. Streams
//! are identified by name, so adding a new consumer never shifts an existing
//! one. Numeric sub-keys (image index, cell index) are folded in with
//! [`derive_indexed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for the stream named `label`.
pub fn derive(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label.as_bytes()))
}

/// Derive a child seed for `label` and a list of numeric keys.
pub fn derive_indexed(seed: u64, label: &str, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(derive(seed, label), |h, &k| splitmix64(h ^ splitmix64(k)))
}

/// A ChaCha8 generator for the named stream.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label))
}

pub fn stream_indexed(seed: u64, label: &str, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, label, keys))
}
