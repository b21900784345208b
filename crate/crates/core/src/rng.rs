//! Counter-style random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream selected by
//! `(seed, domain, a, b)`, so results never depend on evaluation order or on
//! the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domains keep streams used by different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Particles = 1,
    SliceNoise = 2,
    PhantomShape = 3,
    Permutation = 4,
    Split = 5,
    Motion = 6,
    Test = 99,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Random stream for `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(splitmix64(a.wrapping_mul(0x1000_0000_01B3) ^ splitmix64(b)));
    rng
}
