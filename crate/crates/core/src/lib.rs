//! Differentiable architecture search engine for binary neural networks.
//!
//! The crate is built around four layers:
//!
//! * a dense-tensor reverse-mode autodiff core ([`tensor`], [`tape`], [`ops`],
//!   [`optim`]),
//! * bit-packed sign kernels that evaluate binary convolutions with
//!   XNOR/popcount arithmetic ([`bitpack`], [`binconv`]),
//! * the binary-first cell search space, temperature-regularized supernet and
//!   progressive bilevel search loop ([`space`], [`cell`], [`search`]),
//! * discrete genotype extraction, evaluation networks, the two-phase
//!   binarization protocol and a static FLOPs/BOPs cost model ([`genotype`],
//!   [`evalnet`], [`cost`]).
//!
//! Everything here is deterministic given a seed and runs on a single thread;
//! the crate is `no_std`-compatible (`alloc` required) with the default `std`
//! feature disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod binconv;
pub mod bitpack;
pub mod cell;
pub mod check;
pub mod cost;
pub mod data;
pub mod error;
pub mod evalnet;
pub mod genotype;
mod math;
pub mod ops;
pub mod optim;
pub mod search;
pub mod space;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// RNG used everywhere; ChaCha gives identical streams on every platform.
pub type SeedRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a seed.
pub fn seed_rng(seed: u64) -> SeedRng {
    <SeedRng as rand::SeedableRng>::seed_from_u64(seed)
}
