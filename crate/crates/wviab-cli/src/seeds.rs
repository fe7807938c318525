//! Derived seeds: `seed + fnv1a64(purpose)`, wrapping.

/// 64-bit FNV-1a, fixed across platforms and releases.
pub fn stable_hash(purpose: &str) -> u64 {
    purpose.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn derive(seed: u64, purpose: &str) -> u64 {
    seed.wrapping_add(stable_hash(purpose))
}
