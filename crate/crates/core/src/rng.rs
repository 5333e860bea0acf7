//! Seeded random streams. Everything random in the crate draws from a
//! [`Rng`] derived from an explicit seed.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

/// A stream for `seed`, separated from other streams of the same seed by `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
