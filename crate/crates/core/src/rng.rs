//! Seed derivation. Every random stream in a run is a ChaCha8 generator keyed
//! by the run seed plus a stream label and index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = splitmix(seed);
    for b in stream.bytes() {
        h = splitmix(h ^ b as u64);
    }
    splitmix(h ^ index)
}

pub fn stream_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
