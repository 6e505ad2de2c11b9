//! Desk-scale GAN-inversion image inpainting.
//!
//! The crate trains and runs an encoder/generator pair in which a corrupted
//! image is inverted into a per-layer style matrix, re-modulated from
//! multi-scale structure vectors, and synthesized by a style-modulated
//! generator that also receives the corrupted pixels through a skip branch.
//! Losses, image-quality metrics and the training loops are all included, so
//! the whole stack runs self-contained on procedural toy data.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! enables threaded matmul kernels. File formats, image I/O and the command
//! line live in the companion `latentfill` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod generator;
pub mod imaging;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::Error;
pub type Result<T, E = Error> = core::result::Result<T, E>;
