//! Seed derivation.
//!
//! Every random stream in a run is derived from one root seed plus a role tag
//! (for example `"bags"`, `"train/minibag"`, `"eval/mae/n=12"`). The tag is
//! hashed with 64-bit FNV-1a, mixed with the root seed, and finalized with
//! SplitMix64. Streams for different roles are therefore independent of the
//! order in which they are created, so parallel execution never changes
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type LlpRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for the stream identified by `tag` under `root`.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Creates the random source for the stream identified by `tag` under `root`.
pub fn stream(root: u64, tag: &str) -> LlpRng {
    LlpRng::seed_from_u64(derive_seed(root, tag))
}
