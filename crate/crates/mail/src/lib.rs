//! Multimodal attention-fusion networks with adversarially robust variants.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense f64 tensors with reverse-mode autodiff and the
//!   primitive layers (convolution, pooling, DCT, shuffle, activations).
//! - [`nn`]: parameterized layers (conv, linear, batch norm).
//! - [`blocks`]: the attention blocks (multi-scale convolution, channel
//!   attention, residual attention, frequency and spatial fusion).
//! - [`net`]: network assembly, the multitask loss, cost accounting and
//!   checkpoints.
//! - [`robust`]: random projection filters, modulated attention noise,
//!   white-box attacks and adversarial training.
//! - [`train`]: SGD, plateau LR scheduling and classification metrics.
//! - [`data`]: dataset container, synthetic task generator, augmentation.
//! - [`gradcheck`]: finite-difference verification harness.

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod nn;
pub mod rng;
pub mod robust;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
