//! Seeded random streams.
//!
//! Every stochastic decision in the pipeline draws from a stream derived from
//! `(seed, purpose, epoch, index)`. Streams never depend on how many values
//! another stream consumed, so results do not depend on worker count and a
//! resumed run replays exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Synth = 2,
    Sampler = 3,
    Augment = 4,
    Folds = 5,
    Labels = 6,
    Shuffle = 7,
    Eval = 8,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key components into a 64-bit seed.
pub fn derive_seed(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ purpose as u64);
    h = splitmix(h ^ epoch);
    splitmix(h ^ index)
}

pub fn stream(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, epoch, index))
}
