//! Seed derivation.
//!
//! Every random stream is keyed by `(seed, stream, replication)` and mixed
//! through SplitMix64, so a replication draws the same numbers no matter which
//! worker runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Process and observation noise of the simulated stream.
pub const STREAM_NOISE: u64 = 0;
/// Random subset draws made by the sampler.
pub const STREAM_SAMPLER: u64 = 1;
/// Bootstrap resampling.
pub const STREAM_BOOTSTRAP: u64 = 2;
/// Construction of generated models.
pub const STREAM_MODEL: u64 = 3;
/// Base seed of the in-control replications used for calibration.
pub const STREAM_CALIBRATION: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, replication: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ replication.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn rng_for(seed: u64, stream: u64, replication: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, replication))
}
