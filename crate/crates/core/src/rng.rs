//! Seeding.
//!
//! Every random stream is a [`ChaCha8Rng`] seeded from a 64-bit value. Per-run
//! seeds are derived from the master seed with [`derive_seed`], which mixes
//! `(master, stream, index)` through the SplitMix64 finalizer. Two runs with
//! the same triple draw the same numbers regardless of which worker thread
//! executes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used by the experiment driver.
pub mod stream {
    pub const PARAMS: u64 = 1;
    pub const ARRIVALS: u64 = 2;
    pub const WINDOWS: u64 = 3;
    pub const VALIDATE: u64 = 4;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(master ^ splitmix64(stream)) + index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stream: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, stream, index))
}
