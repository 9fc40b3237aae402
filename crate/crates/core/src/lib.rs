//! Core building blocks for a trainable dialogue-coherence metric.
//!
//! Everything in this crate is pure computation over in-memory data:
//! tokenization and pair encoding, a small transformer encoder with a
//! scoring head and hand-written backprop, the multi-level ranking and
//! distillation objectives, the comparison objectives, rank-correlation
//! statistics, and a 2-D PCA projector. File formats, training loops and
//! the command line live in the companion `dcmetric` crate.
//!
//! The crate is `no_std` (with `alloc`); all float math goes through
//! [`math`] so numerics are identical on every platform.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod baselines;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod math;
pub mod mlr;
pub mod model;
pub mod optim;
pub mod pca;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
