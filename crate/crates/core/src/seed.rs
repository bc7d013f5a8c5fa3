//! Labeled seed derivation.
//!
//! Every random stream in the crate is derived from one root seed and a
//! label, so that independent consumers never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root`, a textual label and a list of indices.
///
/// The mapping is stable across platforms and compiler versions.
pub fn derive(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut acc = splitmix64(root ^ h);
    for &i in indices {
        acc = splitmix64(acc ^ splitmix64(i));
    }
    acc
}

/// Seeded generator for a labeled stream.
pub fn rng(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, label, indices))
}
