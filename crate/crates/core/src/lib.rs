//! Head-tail cooperative relation classification for long-tailed scene graphs.
//!
//! This crate is `no_std` (with `alloc`) and holds every piece of the
//! algorithmic pipeline:
//!
//! - [`tensor`], [`autograd`], [`params`], [`optim`], [`gradcheck`]: a small
//!   double-precision reverse-mode differentiation stack.
//! - [`data`]: synthetic long-tail scene graphs, class statistics and
//!   class-balanced resampling.
//! - [`features`]: object encoder, context encoder and predicate decoder.
//! - [`htcl`]: head-prefer classifier, semantic representation, tail-prefer
//!   feature encoder, tail-prefer classifier and the gated cooperation.
//! - [`losses`]: contrastive, head-center, re-weighted and plain
//!   cross-entropy objectives.
//! - [`train`]: training, classifier fine-tuning and ablation variants.
//! - [`metrics`]: R@K, mR@K, F@K and M@K.
//! - [`checks`]: gradient checks over every layer and loss.
//!
//! File formats, the command line and anything touching the filesystem live
//! in the companion `htcl` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod checks;
pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod htcl;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
