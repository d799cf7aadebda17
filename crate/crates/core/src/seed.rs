//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(global_seed, stream name, entity
//! ids...)`, so adding an entity never perturbs the draws of another one and
//! the stream a user sees is the same whichever orchestration policy runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a, stable across platforms and toolchains.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a 64-bit seed from a global seed, a stream name and entity keys.
pub fn derive_seed(global: u64, stream: &str, keys: &[u64]) -> u64 {
    let mut h = splitmix64(global ^ splitmix64(name_hash(stream)));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(global: u64, stream: &str, keys: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(global, stream, keys))
}
