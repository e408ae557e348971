//! Deterministic seed derivation.
//!
//! Every stochastic stage draws its own stream from the master seed so that
//! stages can be reordered or run in parallel without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer applied to `master ^ stream`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream identifiers used by the pipeline.
pub(crate) const STREAM_GLOBAL_LEIDEN: u64 = 1;
pub(crate) const STREAM_REFINE: u64 = 2;
pub(crate) const STREAM_GCN_INIT: u64 = 3;
