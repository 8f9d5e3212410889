//! Core of the xcat super-resolution network.
//!
//! Everything in this crate is pure computation over in-memory tensors and
//! builds without `std` (an allocator is required). File formats, image IO and
//! the command line tool live in the companion `xcat` crate.
//!
//! Module map:
//! - [`tensor`]: rank-4 channel-last tensors and channel-axis permutations.
//! - [`ops`]: float convolution (reference and im2col paths), depth-to-space,
//!   activations and their reverse-mode counterparts.
//! - [`model`]: network configuration, presets for the ablation rows, forward
//!   pass, parameter and MAC accounting.
//! - [`quant`]: UINT8 post-training quantization, integer inference and the
//!   representative image search.
//! - [`train`]: losses, backpropagation, Adam, warm-up schedule, augmentation
//!   and the training loop.
//! - [`eval`]: bicubic resampling, PSNR, the challenge score and evaluation
//!   reports.
//! - [`synth`]: procedural images for tests and offline experiments.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod model;
pub mod ops;
pub mod quant;
pub mod real;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, XcatConfig};
pub use quant::{QModel, QuantParams};
pub use real::Real;
pub use tensor::{Shape, Tensor};
