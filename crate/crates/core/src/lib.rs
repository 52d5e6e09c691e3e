//! Building blocks for compact self-attention backbones.
//!
//! This crate is `no_std` (it needs `alloc`). It contains:
//!
//! - [`tensor`]: a deterministic rank-4 NCHW tensor, generic over [`Real`]
//!   so the same code path runs in `f32` for training and `f64` for
//!   gradient checks, plus the little-endian tensor blob codec.
//! - [`nn`]: convolution, pooling, batch norm, activations, linear layer and
//!   softmax cross-entropy, each with a hand-written backward pass.
//! - [`dcac`]: the double-condensing attention condenser block.
//! - [`aads`]: anti-aliased (blur then subsample) downsampling and the
//!   shift-consistency metric.
//! - [`backbone`]: declarative columnar architectures, their validator,
//!   parameter builder, executor and cost model.
//! - [`explorer`]: NetScore, the design-rule constraint set and an
//!   evolutionary search over architectures.
//!
//! IO, datasets, training loops and the command line live in the
//! `condenser` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aads;
pub mod backbone;
pub mod dcac;
pub mod error;
pub mod explorer;
pub mod gradsuite;
pub mod nn;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::Rng;
pub use tensor::{Shape, Tensor};
