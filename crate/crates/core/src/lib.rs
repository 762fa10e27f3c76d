//! Kervolutional neural networks on the CPU.
//!
//! A kervolution slides a window over its input like a convolution, but
//! scores every patch against every filter with a kernel function κ instead
//! of a plain inner product. The linear kernel recovers convolution exactly.
//!
//! The crate is organised bottom-up: [`tensor`] and [`patch`] (im2col) feed
//! [`kernels`], which [`layers::Kerv2d`] wraps into a trainable layer. On top
//! sit a LeNet-5 builder ([`model`]), SGD ([`optim`]), MNIST loading
//! ([`data`]), the training loop ([`train`]), FGSM ([`adversarial`]),
//! micro-benchmarks ([`bench`]), finite-difference checks ([`gradcheck`]) and
//! the command implementations used by the `kerv` binary ([`commands`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod bench;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod optim;
pub mod patch;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use kernels::{kernel_backward, kernel_forward, KernelKind, KernelSpec};
pub use layers::{Kerv2d, Kerv2dConfig, Layer};
pub use model::{build_lenet5, Arrangement, Checkpoint, Model, ModelConfig};
pub use patch::{PaddingMode, PatchGeometry};
pub use tensor::Tensor;
