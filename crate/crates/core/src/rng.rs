//! Named, reproducible random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream keyed by
//! `(master seed, purpose, index)`. ChaCha is counter-based, so streams are
//! independent and any one of them can be regenerated in isolation, which
//! keeps parallel rollouts bit-identical to sequential ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Trajectory = 1,
    IidPair = 2,
    PairSubsample = 3,
    MonteCarlo = 4,
    Calibration = 5,
    HeldOut = 6,
    Oracle = 7,
}

pub fn stream(master: u64, purpose: Purpose, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << 56) ^ (index & ((1 << 56) - 1)));
    rng
}

/// Derives a child master seed, used when one logical seed fans out into
/// several independent datasets (e.g. training vs calibration).
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    // splitmix64 finalizer over the packed key
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((purpose as u64) << 56) ^ index);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
