//! Seed derivation for the independent random streams used by a run.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, domain, index)`, so adding draws in one place never shifts the
//! values seen anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness. The discriminant is part of the stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Profiles = 1,
    Fading = 2,
    Partition = 3,
    ModelInit = 4,
    Synthetic = 5,
    Training = 6,
}

/// Returns the stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) ^ index);
    rng
}
