//! Seeded random streams. Every component draws from its own ChaCha
//! stream keyed by `(seed, stream)`, so adding draws in one component never
//! shifts another's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a named component, optionally indexed (e.g. by slice).
pub fn stream_id(tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then mix in the index
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
