//! Seeded random streams.
//!
//! Every stochastic step takes an explicit `u64` seed and builds its own
//! ChaCha8 stream, so results never depend on call order or thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for the named stream of one trial. Depends only on its arguments, so
/// reordering methods or running trials concurrently leaves every stream
/// unchanged.
pub fn derive_seed(master_seed: u64, trial: u64, stream: &str) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ trial.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(h ^ fnv1a(stream.as_bytes()))
}

/// Combine a derived stream seed with a user-provided seed from a config.
pub fn mix(derived: u64, user_seed: u64) -> u64 {
    splitmix64(derived ^ splitmix64(user_seed))
}
