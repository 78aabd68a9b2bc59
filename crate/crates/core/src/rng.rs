//! Seed streams.
//!
//! Every replicate draws from its own generator seeded by
//! `stream_seed(master, label, index)`, so results never depend on how the
//! replicates are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation.
pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable hash of `(master, label, index)`.
pub fn stream_seed(master: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ fnv1a(label));
    splitmix64(b ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Derive a sub-master seed, e.g. one per grid point of an experiment.
pub fn substream(master: u64, label: &str, index: u64) -> u64 {
    stream_seed(master, label, index) ^ 0xA5A5_5A5A_C3C3_3C3C
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
