//! Seeded random streams.
//!
//! A single run seed fans out into independent substreams keyed by a stage
//! tag (and optionally an index), so that any stage can be re-run on its own
//! and still see the same randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Stream for a pipeline stage.
pub fn stage_rng(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(tag))))
}

/// Counter-based stream for item `index` of a stage (e.g. one pixel).
pub fn indexed_rng(seed: u64, tag: &str, index: u64) -> Rng {
    let base = splitmix64(seed ^ splitmix64(fnv1a(tag)));
    Rng::seed_from_u64(splitmix64(base ^ splitmix64(index.wrapping_add(1))))
}
