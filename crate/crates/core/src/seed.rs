//! Seed derivation. Every random stream in a run is keyed by the run seed plus
//! a tuple of stream tags such as the client index and round, never by execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SAMPLE_CLIENTS: u64 = 3;
    pub const CLUSTER: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SCHEDULE: u64 = 6;
    pub const SYNTH: u64 = 7;
    pub const HOPKINS: u64 = 8;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each tag in turn.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stable 64-bit FNV-1a hash, used to key per-client streams by client name.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
