//! Edge-preserving cycle-consistent domain adaptation for vessel segmentation.
//!
//! The pipeline has two stages. A pair of image translators is trained
//! between two unpaired domains with adversarial, cycle-consistency and
//! edge-preservation losses ([`gantrain`]). A U-Net segmentor is then trained
//! on source images translated into the target domain while the translator
//! stays frozen ([`segtrain`]). [`eval`] scores the resulting masks and
//! drives whole experiments.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod edgeops;
pub mod error;
pub mod eval;
pub mod gantrain;
pub mod imagecore;
pub mod networks;
pub mod ops;
pub mod segtrain;

pub use error::{Error, Result};
pub use imagecore::{Image, Padding, ProbMap, SegMask};

/// Independent sub-seed for stream `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
