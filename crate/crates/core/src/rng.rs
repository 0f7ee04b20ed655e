//! Reproducible random substreams.
//!
//! Every replication draws from its own ChaCha8 stream, selected by a key
//! derived from the master seed and the replication coordinates. A stream is
//! a pure function of `(master, key)`, so serial and parallel runs see the
//! same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SubRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a key path.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Generator for substream `key` of `master`.
pub fn substream(master: u64, key: u64) -> SubRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(key);
    rng
}

/// Generator for a single-trajectory seed.
pub fn from_seed(seed: u64) -> SubRng {
    ChaCha8Rng::seed_from_u64(seed)
}
