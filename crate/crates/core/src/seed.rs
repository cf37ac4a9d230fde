//! Stable seed derivation.
//!
//! Every random stream in the crate is seeded from a master seed through
//! [`derive`], so results do not depend on scheduling or thread count. The
//! mixing function is SplitMix64 applied to each component in turn; it is
//! part of the reproducibility contract and must not change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep data generation and GA runs on independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Ga = 2,
    Sampling = 3,
    Reference = 4,
    Synthetic = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `hash(master, stream, a, b)`.
pub fn derive(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

pub fn rng(master: u64, stream: Stream, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(derive(master, stream, a, b))
}
