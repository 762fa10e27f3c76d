//! SGD with momentum, weight decay and a milestone learning-rate schedule.

use crate::error::{Error, Result};
use crate::kernels::HYPER_FLOOR;
use crate::layers::{Param, ParamRole};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    /// Multiplicative learning-rate factor applied at each milestone.
    pub gamma: f64,
    pub max_epochs: usize,
    /// Also decay learnable kernel hyperparameters (off by default).
    pub decay_hyper: bool,
}

impl Default for SgdConfig {
    /// Batch-50 MNIST recipe: lr 0.003, momentum 0.9, ×0.1 at epochs 10 and 15,
    /// 20 epochs, no weight decay.
    fn default() -> Self {
        Self {
            lr: 0.003,
            momentum: 0.9,
            weight_decay: 0.0,
            milestones: vec![10, 15],
            gamma: 0.1,
            max_epochs: 20,
            decay_hyper: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// `lr · gamma^(number of milestones ≤ epoch)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.gamma.powi(passed as i32)
    }
}

/// Momentum state, one velocity tensor per parameter tensor.
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// `v ← μ·v + (g + λ·p)`, `p ← p − lr·v`, then kernel hyperparameters are
    /// clamped to at least [`HYPER_FLOOR`].
    pub fn step(&mut self, params: Vec<Param<'_>>, lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, step received {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let momentum = self.config.momentum;
        for (param, vel) in params.into_iter().zip(&mut self.velocity) {
            if param.value.shape() != vel.shape() || param.grad.shape() != vel.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?} / gradient {:?} / velocity {:?} shapes differ",
                    param.value.shape(),
                    param.grad.shape(),
                    vel.shape()
                )));
            }
            let decay = match param.role {
                ParamRole::KernelHyper if !self.config.decay_hyper => 0.0,
                _ => self.config.weight_decay,
            };
            let values = param.value.data_mut();
            for ((p, v), &g) in values.iter_mut().zip(vel.data_mut()).zip(param.grad.data()) {
                *v = momentum * *v + (g + decay * *p);
                *p -= lr * *v;
            }
            if param.role == ParamRole::KernelHyper {
                values.iter_mut().for_each(|p| *p = p.max(HYPER_FLOOR));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(sgd: &mut Sgd, value: &mut Tensor, grad: &mut Tensor, role: ParamRole, lr: f64) {
        sgd.step(vec![Param { value, grad, role }], lr).unwrap();
    }

    #[test]
    fn schedule_follows_milestones() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 0.003);
        assert_eq!(cfg.lr_at_epoch(9), 0.003);
        assert!((cfg.lr_at_epoch(10) - 0.0003).abs() < 1e-18);
        for e in 15..20 {
            assert!((cfg.lr_at_epoch(e) - 0.00003).abs() < 1e-18);
        }
        for e in 1..20 {
            assert!(cfg.lr_at_epoch(e) <= cfg.lr_at_epoch(e - 1));
        }
    }

    #[test]
    fn vanilla_sgd() {
        let mut sgd = Sgd::new(SgdConfig {
            momentum: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        let mut p = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let mut g = Tensor::new(&[2], vec![0.5, 0.25]).unwrap();
        step_once(&mut sgd, &mut p, &mut g, ParamRole::Weight, 0.1);
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn two_momentum_steps() {
        let mut sgd = Sgd::new(SgdConfig::default()).unwrap();
        let mut p = Tensor::scalar(0.0);
        let mut g = Tensor::scalar(2.0);
        step_once(&mut sgd, &mut p, &mut g, ParamRole::Weight, 1.0);
        step_once(&mut sgd, &mut p, &mut g, ParamRole::Weight, 1.0);
        assert!((p.data()[0] + 2.0 * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn hyperparameters_are_projected() {
        let mut sgd = Sgd::new(SgdConfig::default()).unwrap();
        let mut c = Tensor::scalar(0.5);
        let mut g = Tensor::scalar(10.0);
        step_once(&mut sgd, &mut c, &mut g, ParamRole::KernelHyper, 1.0);
        assert_eq!(c.data()[0], HYPER_FLOOR);
    }

    #[test]
    fn hyperparameters_skip_weight_decay() {
        let cfg = SgdConfig {
            weight_decay: 0.5,
            momentum: 0.0,
            ..SgdConfig::default()
        };
        let mut sgd = Sgd::new(cfg.clone()).unwrap();
        let mut c = Tensor::scalar(1.0);
        let mut w = Tensor::scalar(1.0);
        let (mut gc, mut gw) = (Tensor::scalar(0.0), Tensor::scalar(0.0));
        sgd.step(
            vec![
                Param {
                    value: &mut c,
                    grad: &mut gc,
                    role: ParamRole::KernelHyper,
                },
                Param {
                    value: &mut w,
                    grad: &mut gw,
                    role: ParamRole::Weight,
                },
            ],
            0.1,
        )
        .unwrap();
        assert_eq!(c.data()[0], 1.0);
        assert_eq!(w.data()[0], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn quadratic_matches_closed_form_recursion() {
        // loss ½x², gradient x
        let (mu, lr) = (0.9, 0.05);
        let mut sgd = Sgd::new(SgdConfig {
            momentum: mu,
            ..SgdConfig::default()
        })
        .unwrap();
        let mut x = Tensor::scalar(3.0);
        let (mut xr, mut vr) = (3.0f64, 0.0f64);
        for _ in 0..200 {
            let mut g = Tensor::scalar(x.data()[0]);
            step_once(&mut sgd, &mut x, &mut g, ParamRole::Weight, lr);
            vr = mu * vr + xr;
            xr -= lr * vr;
            assert!((x.data()[0] - xr).abs() <= 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SgdConfig {
                lr: 0.0,
                ..SgdConfig::default()
            },
            SgdConfig {
                momentum: 1.0,
                ..SgdConfig::default()
            },
            SgdConfig {
                gamma: 0.0,
                ..SgdConfig::default()
            },
            SgdConfig {
                milestones: vec![10, 10],
                ..SgdConfig::default()
            },
        ] {
            assert!(Sgd::new(bad).is_err());
        }
    }
}
