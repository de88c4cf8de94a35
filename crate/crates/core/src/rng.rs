//! Deterministic RNG tree: every task draws from a ChaCha stream keyed by
//! `(master seed, stable task path)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a task path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |s, &p| splitmix(s ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// RNG stream for the task identified by `path`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, path))
}

/// Stable 64-bit tag for a string label (FNV-1a), for use in task paths.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}
