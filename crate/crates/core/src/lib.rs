//! Bridge-type generation with a Wasserstein GAN over a 2-D latent space.
//!
//! * [`geometry`] synthesizes the symmetric three-span bridge corpus.
//! * [`nn`] declares, builds and evaluates the critic and generator.
//! * [`train`] runs alternating WGAN-GP training and writes checkpoints.
//! * [`explore`] samples the latent plane on a grid, screens decoded images
//!   for structural plausibility and assembles montages.

pub mod explore;
pub mod geometry;
pub mod image;
pub mod nn;
pub mod train;

pub use image::GrayImage;

/// One round of the SplitMix64 finalizer; used to derive independent seeds.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `tag` of a run seeded with `base`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag)
}

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/exploring.md")]
    mod exploring {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
}
