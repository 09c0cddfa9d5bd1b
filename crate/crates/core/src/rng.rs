//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream, keyed by
//! the user seed plus a purpose tag and an index, so results never depend on
//! scheduling or on how many draws another consumer made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for stream derivation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    InputPaths = 1,
    Directions = 2,
    Noise = 3,
    Network = 4,
    Generic = 5,
}

/// Independent generator for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 48) ^ index);
    rng
}
