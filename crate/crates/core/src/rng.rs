//! Per-tree random streams. A tree's generator depends only on the master
//! seed, a cell label and the tree index, so results do not depend on how
//! trees are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TreeRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a label (probe index, experiment cell, ...).
pub fn derive_seed(master: u64, label: u64) -> u64 {
    splitmix64(splitmix64(master) ^ label.rotate_left(17))
}

/// Stable 64-bit label from text, e.g. a cell name.
pub fn label_of(text: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator for tree `tree` of the stream `seed`.
pub fn tree_rng(seed: u64, tree: u64) -> TreeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    rng
}
