//! Training, evaluation and visualization tooling around
//! [`dcmetric_core`]: corpus file formats, checkpoints, the two-stage
//! training pipeline, the correlation harness and plot-data emitters.

pub mod checkpoint;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod selftest;
pub mod synth;
pub mod viz;

pub use error::{Result, ToolError};
