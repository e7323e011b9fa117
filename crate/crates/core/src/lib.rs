//! Multi-scale temporal-only convolution for long-range video features.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense tensors and reverse-mode differentiation.
//! - [`ops`]: differentiable primitives (temporal depthwise and pointwise
//!   convolution, pooling, channel grouping and shuffling, batch norm, losses).
//! - [`layer`]: the five-branch temporal convolution module, the grouped and
//!   shuffled layer built from it, stacking, and parameter accounting.
//! - [`model`]: feature tensor to class logits, plus checkpoints.
//! - [`data`]: feature files, the synthetic complex-action generator and
//!   temporal-extent alterations.
//! - [`train`]: SGD, metrics and experiment runners.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layer;
pub mod model;
pub mod params;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Precision, Rng, Tensor};
