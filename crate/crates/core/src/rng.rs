//! Deterministic per-path random streams.
//!
//! A run is identified by one 64-bit master seed. Each consumer (a simulation
//! side, a pilot run, ...) picks a `family` tag, and each path an `index`. The
//! ChaCha8 key is derived as
//!
//! ```text
//! key = splitmix64(master ^ splitmix64(family + 0x9E3779B97F4A7C15))
//! ```
//!
//! and the path index selects the ChaCha stream (nonce), so every
//! `(master, family, index)` triple owns an independent, reproducible stream no
//! matter which worker generates the path or in what order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream families used inside the crate. Distinct families never share
/// streams for the same master seed.
pub mod family {
    pub const PATHS: u64 = 1;
    pub const REWEIGHT_DIRECT: u64 = 2;
    pub const REWEIGHT_WEIGHTED: u64 = 3;
    pub const PILOT: u64 = 4;
    pub const SINGULARITY_P: u64 = 5;
    pub const SINGULARITY_Q: u64 = 6;
    pub const PREMIUM: u64 = 7;
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn family_key(master: u64, family: u64) -> u64 {
    splitmix64(master ^ splitmix64(family.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// A random stream owned by exactly one path.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(master: u64, family: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(family_key(master, family));
        rng.set_stream(index);
        RngStream(rng)
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
