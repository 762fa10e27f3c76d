use crate::error::{Error, Result};
use crate::kernels::{kernel_backward, kernel_forward, KernelCache, KernelSpec};
use crate::patch::{col2im_channels_into, im2col_channels, PatchGeometry};
use crate::tensor::Tensor;

use super::{init_uniform, layer_rng, Layer, Param, ParamRole};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kerv2dConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: PatchGeometry,
    pub groups: usize,
    pub use_bias: bool,
    pub spec: KernelSpec,
}

impl Kerv2dConfig {
    pub fn new(in_channels: usize, out_channels: usize, geom: PatchGeometry, spec: KernelSpec) -> Self {
        Self {
            in_channels,
            out_channels,
            geom,
            groups: 1,
            use_bias: true,
            spec,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.geom.patch_area()
    }
}

struct ForwardState {
    input_shape: Vec<usize>,
    out_hw: (usize, usize),
    groups: Vec<KernelCache>,
}

/// Kervolutional layer: every output is `κ(patch, filter)` over a sliding
/// window, plus an optional per-channel bias added after the kernel map.
///
/// With [`KernelSpec::Linear`] this is ordinary 2-D convolution
/// (cross-correlation); there is no separate convolution layer.
pub struct Kerv2d {
    config: Kerv2dConfig,
    weight: Tensor,
    bias: Tensor,
    /// `[1]`-shaped copy of the learnable hyperparameter, or a dummy when the
    /// kernel has none / it is frozen.
    hyper: Tensor,
    weight_grad: Tensor,
    bias_grad: Tensor,
    hyper_grad: Tensor,
    state: Option<ForwardState>,
}

impl Kerv2d {
    /// Weights and bias are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(config: Kerv2dConfig, seed: u64) -> Result<Self> {
        config.geom.validate()?;
        config.spec.validate()?;
        let Kerv2dConfig {
            in_channels,
            out_channels,
            groups,
            ..
        } = config;
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Argument(format!(
                "groups ({groups}) must divide in_channels ({in_channels}) and out_channels ({out_channels})"
            )));
        }
        let (kh, kw) = config.geom.kernel;
        let shape = [out_channels, in_channels / groups, kh, kw];
        let bound = 1.0 / (config.fan_in() as f64).sqrt();
        let mut rng = layer_rng(seed);
        let weight = init_uniform(&shape, bound, &mut rng);
        let bias = if config.use_bias {
            init_uniform(&[out_channels], bound, &mut rng)
        } else {
            Tensor::zeros(&[out_channels])
        };
        Ok(Self {
            weight_grad: Tensor::zeros(&shape),
            bias_grad: Tensor::zeros(&[out_channels]),
            hyper: Tensor::scalar(config.spec.hyper().unwrap_or(0.0)),
            hyper_grad: Tensor::scalar(0.0),
            weight,
            bias,
            config,
            state: None,
        })
    }

    pub fn config(&self) -> &Kerv2dConfig {
        &self.config
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn weight_grad(&self) -> &Tensor {
        &self.weight_grad
    }

    pub fn bias_grad(&self) -> &Tensor {
        &self.bias_grad
    }

    pub fn hyper_grad(&self) -> f64 {
        self.hyper_grad.data()[0]
    }

    /// Current kernel including the live hyperparameter value.
    pub fn spec(&self) -> KernelSpec {
        match self.config.spec.hyper() {
            Some(_) => self.config.spec.with_hyper(self.hyper.data()[0]),
            None => self.config.spec,
        }
    }

    pub fn set_hyper(&mut self, value: f64) {
        self.hyper.data_mut()[0] = value;
    }

    fn has_learnable_hyper(&self) -> bool {
        self.config.spec.hyper_is_learnable()
    }

    fn group_filters(&self, g: usize) -> Result<Tensor> {
        let per_group = self.config.out_channels / self.config.groups;
        let width = self.weight.len() / self.config.out_channels;
        let start = g * per_group * width;
        Tensor::new(
            &[per_group, width],
            self.weight.data()[start..start + per_group * width].to_vec(),
        )
    }
}

impl Layer for Kerv2d {
    fn name(&self) -> String {
        let c = &self.config;
        format!(
            "kerv2d({}->{}, {}x{}, {})",
            c.in_channels,
            c.out_channels,
            c.geom.kernel.0,
            c.geom.kernel.1,
            self.spec()
        )
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let &[n, c, h, w] = input.shape() else {
            return Err(Error::Dimension(format!(
                "kerv2d expects NxCxHxW input, got {:?}",
                input.shape()
            )));
        };
        if c != self.config.in_channels {
            return Err(Error::Dimension(format!(
                "kerv2d expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let (oh, ow) = self.config.geom.output_size(h, w)?;
        let spatial = oh * ow;
        let groups = self.config.groups;
        let cin = c / groups;
        let kout = self.config.out_channels / groups;
        let spec = self.spec();

        let mut out = Tensor::zeros(&[n, self.config.out_channels, oh, ow]);
        let mut caches = Vec::with_capacity(groups);
        for g in 0..groups {
            let patches = im2col_channels(input, g * cin, cin, &self.config.geom)?;
            let (resp, cache) = kernel_forward(patches, self.group_filters(g)?, &spec)?;
            let od = out.data_mut();
            for b in 0..n {
                for s in 0..spatial {
                    let row = resp.row(b * spatial + s);
                    for (kk, &v) in row.iter().enumerate() {
                        od[((b * self.config.out_channels) + g * kout + kk) * spatial + s] = v;
                    }
                }
            }
            caches.push(cache);
        }
        if self.config.use_bias {
            let bias = self.bias.data();
            for (i, plane) in out.data_mut().chunks_exact_mut(spatial).enumerate() {
                let b = bias[i % self.config.out_channels];
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
        self.state = Some(ForwardState {
            input_shape: input.shape().to_vec(),
            out_hw: (oh, ow),
            groups: caches,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("kerv2d backward called before forward".into()))?;
        let n = state.input_shape[0];
        let k = self.config.out_channels;
        let (oh, ow) = state.out_hw;
        let spatial = oh * ow;
        grad_out.expect_shape(&[n, k, oh, ow], "kerv2d upstream gradient")?;

        let groups = self.config.groups;
        let cin = self.config.in_channels / groups;
        let kout = k / groups;
        let width = self.weight.len() / k;
        let learn_hyper = self.has_learnable_hyper();

        let mut grad_in = Tensor::zeros(&state.input_shape);
        let gd = grad_out.data();
        for (g, cache) in state.groups.iter().enumerate() {
            let mut upstream = vec![0.0; n * spatial * kout];
            for b in 0..n {
                for kk in 0..kout {
                    let plane = &gd[((b * k) + g * kout + kk) * spatial..][..spatial];
                    for (s, &v) in plane.iter().enumerate() {
                        upstream[(b * spatial + s) * kout + kk] = v;
                    }
                }
            }
            let upstream = Tensor::new(&[n * spatial, kout], upstream)?;
            let grads = kernel_backward(cache, &upstream)?;

            let wg = &mut self.weight_grad.data_mut()[g * kout * width..(g + 1) * kout * width];
            for (a, b) in wg.iter_mut().zip(grads.filters.data()) {
                *a += b;
            }
            if learn_hyper {
                if let Some(h) = grads.hyper {
                    self.hyper_grad.data_mut()[0] += h;
                }
            }
            col2im_channels_into(&grads.patches, &self.config.geom, &mut grad_in, g * cin, cin)?;
        }
        if self.config.use_bias {
            let bg = self.bias_grad.data_mut();
            for (i, plane) in gd.chunks_exact(spatial).enumerate() {
                bg[i % k] += plane.iter().sum::<f64>();
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.weight];
        if self.config.use_bias {
            out.push(&self.bias);
        }
        if self.has_learnable_hyper() {
            out.push(&self.hyper);
        }
        out
    }

    fn grads(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.weight_grad];
        if self.config.use_bias {
            out.push(&self.bias_grad);
        }
        if self.has_learnable_hyper() {
            out.push(&self.hyper_grad);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<Param<'_>> {
        let use_bias = self.config.use_bias;
        let learn = self.has_learnable_hyper();
        let mut out = vec![Param {
            value: &mut self.weight,
            grad: &mut self.weight_grad,
            role: ParamRole::Weight,
        }];
        if use_bias {
            out.push(Param {
                value: &mut self.bias,
                grad: &mut self.bias_grad,
                role: ParamRole::Bias,
            });
        }
        if learn {
            out.push(Param {
                value: &mut self.hyper,
                grad: &mut self.hyper_grad,
                role: ParamRole::KernelHyper,
            });
        }
        out
    }

    fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
        self.hyper_grad.fill(0.0);
    }

    fn filters(&self) -> Option<&Tensor> {
        Some(&self.weight)
    }

    fn kernel_spec(&self) -> Option<KernelSpec> {
        Some(self.spec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    #[test]
    fn identity_filter_passes_input_through() {
        let cfg = Kerv2dConfig::new(1, 1, PatchGeometry::new(1, 1), KernelSpec::Linear).with_bias(false);
        let mut layer = Kerv2d::new(cfg, 0).unwrap();
        layer.weight_mut().fill(1.0);
        let x = Tensor::randn(&[2, 1, 4, 3], 1).unwrap();
        assert_eq!(layer.forward(&x, true).unwrap(), x);
    }

    #[test]
    fn polynomial_single_patch_equals_scalar_kernel() {
        let spec = KernelSpec::polynomial(3, 1.0);
        let cfg = Kerv2dConfig::new(1, 1, PatchGeometry::new(5, 5), spec).with_bias(false);
        let mut layer = Kerv2d::new(cfg, 4).unwrap();
        let x = Tensor::uniform(&[1, 1, 5, 5], -0.5, 0.5, 3).unwrap();
        let out = layer.forward(&x, false).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        let dot: f64 = x.data().iter().zip(layer.weight().data()).map(|(a, b)| a * b).sum();
        let want = (dot + 1.0).powi(3);
        assert!((out.data()[0] - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = KernelSpec::gaussian(0.5).learnable();
        let cfg = Kerv2dConfig::new(2, 4, PatchGeometry::new(3, 3).with_pad(1, 1), spec).with_groups(2);
        let mut layer = Kerv2d::new(cfg, 9).unwrap();
        let x = Tensor::randn(&[2, 2, 5, 5], 2).unwrap();
        let out = layer.forward(&x, true).unwrap();
        let gin = layer.backward(&Tensor::zeros(out.shape())).unwrap();
        assert!(gin.data().iter().all(|&v| v == 0.0));
        assert!(layer.grads().iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let cfg = Kerv2dConfig::new(1, 1, PatchGeometry::new(2, 2), KernelSpec::L1);
        let mut layer = Kerv2d::new(cfg, 0).unwrap();
        assert!(matches!(
            layer.backward(&Tensor::zeros(&[1, 1, 1, 1])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let cfg = Kerv2dConfig::new(3, 2, PatchGeometry::new(2, 2), KernelSpec::Linear);
        let mut layer = Kerv2d::new(cfg, 0).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[1, 2, 4, 4]), true),
            Err(Error::Dimension(_))
        ));
        assert!(Kerv2d::new(cfg.with_groups(2), 0).is_err());
    }

    #[test]
    fn learnable_hyper_is_a_parameter() {
        let frozen = Kerv2dConfig::new(1, 2, PatchGeometry::new(3, 3), KernelSpec::polynomial(3, 1.0));
        let learn = Kerv2dConfig {
            spec: KernelSpec::polynomial(3, 1.0).learnable(),
            ..frozen
        };
        let a = Kerv2d::new(frozen, 0).unwrap();
        let b = Kerv2d::new(learn, 0).unwrap();
        assert_eq!(b.params().len(), a.params().len() + 1);
        assert_eq!(a.weight(), b.weight());
    }
}
