//! Keyed, splittable randomness.
//!
//! Every random decision in the simulator draws from a ChaCha stream derived
//! from a base seed and a tuple of integer keys (domain tag, round, client,
//! ...). Two draws with the same keys are identical; draws with different keys
//! are independent, regardless of the order in which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags; one per consumer so that streams never collide.
pub mod tag {
    pub const MOBILITY: u64 = 0x6d6f_6269;
    pub const MESSAGE_PHASE: u64 = 0x7068_6173;
    pub const MESSAGE_LOSS: u64 = 0x6c6f_7373;
    pub const JITTER: u64 = 0x6a69_7474;
    pub const SYNTHETIC: u64 = 0x7379_6e74;
    pub const PARTITION: u64 = 0x7061_7274;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const CONNECT: u64 = 0x636f_6e6e;
    pub const GOSSIP: u64 = 0x676f_7373;
    pub const DATA: u64 = 0x6461_7461;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a base seed and a key tuple into a 64-bit value.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

/// Opens the random stream identified by `(seed, keys)`.
pub fn stream(seed: u64, keys: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(seed, keys))
}

/// A uniform draw in `[0, 1)` addressed by `(seed, keys)` without building a stream.
pub fn unit(seed: u64, keys: &[u64]) -> f64 {
    (derive(seed, keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
