//! Forward/backward building blocks.
//!
//! Every layer caches what it needs during `forward` and consumes that cache in
//! `backward`. Parameter gradients accumulate until [`Layer::zero_grad`].

mod basic;
mod kerv2d;
mod loss;
mod pool;

pub use basic::{Dense, Flatten, Relu};
pub use kerv2d::{Kerv2d, Kerv2dConfig};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{AvgPool2d, MaxPool2d};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernels::KernelSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    /// A learnable kernel hyperparameter; kept positive by projection.
    KernelHyper,
}

/// A parameter tensor paired with its gradient accumulator.
pub struct Param<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
    pub role: ParamRole,
}

pub trait Layer: Send {
    fn name(&self) -> String;

    fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor>;

    /// Returns the gradient w.r.t. the input of the last `forward` call.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn grads(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<Param<'_>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// 4-D filter bank for layers that slide a window over the input.
    fn filters(&self) -> Option<&Tensor> {
        None
    }

    /// Effective kernel (with current hyperparameter values), if any.
    fn kernel_spec(&self) -> Option<KernelSpec> {
        None
    }

    /// Discrete choices made by the last `forward` (ReLU signs, max-pool
    /// winners). Empty for layers that are smooth in their inputs.
    fn branch_pattern(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// Seeded uniform fill on `[-bound, bound)`.
pub(crate) fn init_uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = bound * (2.0 * rng.random::<f64>() - 1.0);
    }
    t
}

pub(crate) fn layer_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
