//! Deterministic generator streams derived from a seed and a key path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes; stable across platforms and releases.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |h, k| splitmix(h ^ splitmix(*k)))
}

/// Independent stream for `(seed, keys...)`; the same inputs always yield the same stream.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}

/// Stream for one sample of one batch, independent of batch scheduling.
pub fn sample_stream(seed: u64, epoch: usize, batch: usize, id: &str) -> ChaCha8Rng {
    stream(seed, &[epoch as u64, batch as u64, hash_str(id)])
}
