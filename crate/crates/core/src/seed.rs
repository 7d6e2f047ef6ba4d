//! Seed derivation. Every random stream in a run is derived from one top-level seed
//! and a fixed label, so one number reproduces the whole experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(base: u64, label: &str) -> u64 {
    base ^ fnv1a(label.as_bytes())
}

pub fn rng_for(base: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(base, label))
}
