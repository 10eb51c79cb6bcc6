//! Counter-based random streams keyed by `(master seed, run index, tag)`.
//!
//! Each key maps to its own ChaCha8 stream, so the numbers a run sees do not
//! depend on how many other runs exist or on the order they execute in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for online training rollouts.
pub const TAG_TRAIN: u64 = 0x7472_6169_6e00_0001;
/// Stream used for target-domain evaluation rollouts.
pub const TAG_EVAL: u64 = 0x6576_616c_0000_0002;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(master, run, tag)`.
pub fn stream(master: u64, run: u64, tag: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let words = [
        splitmix64(master),
        splitmix64(master ^ splitmix64(run)),
        splitmix64(tag),
        splitmix64(master.rotate_left(17) ^ run.rotate_left(41) ^ tag),
    ];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
