//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over the seed bytes followed by the key; stable across platforms and releases.
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(key.as_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// An independent stream derived from `(seed, key)`.
pub fn stream(seed: u64, key: &str) -> Rng {
    Rng::seed_from_u64(stream_seed(seed, key))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
