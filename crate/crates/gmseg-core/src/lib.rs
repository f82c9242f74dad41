//! Episodic graph memory network for video object segmentation.
//!
//! The crate is the algorithmic core of the system and is `no_std`-compatible
//! (alloc required): dense tensors with tape-based reverse-mode
//! differentiation, the graph memory module with learnable read/write
//! controllers, the encoder/decoder segmentation network, synthetic video
//! generation, training and inference protocols, and DAVIS-style J/F metrics.
//! File formats, dataset IO and the command-line front end live in the
//! companion `gmseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod ckpt;
pub mod clip;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod memory;
pub mod metrics;
pub mod optim;
pub mod segnet;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

// re-exported so downstream crates share one rand version
pub use rand;
pub use tape::{GradStore, NodeId, Tape};
pub use tensor::{Dtype, HasParams, Parameter, Real, Tensor};

/// Deterministic RNG used across the crate; seeded, portable, no_std-safe.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate-standard RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent RNG stream from a base seed and a stream tag.
pub fn derived_rng(seed: u64, stream: u64) -> Rng {
    // splitmix64 scramble keeps streams decorrelated without a PRF dependency.
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    rng_from_seed(z ^ (z >> 31))
}
