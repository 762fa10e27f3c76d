use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

use super::{init_uniform, layer_rng, Layer, Param, ParamRole};

/// Affine layer `y = x·Wᵀ + b` with `W` stored as `out × in`.
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    weight_grad: Tensor,
    bias_grad: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, seed: u64) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut rng = layer_rng(seed);
        let weight = init_uniform(&[outputs, inputs], bound, &mut rng);
        let bias = init_uniform(&[outputs], bound, &mut rng);
        Self {
            weight_grad: Tensor::zeros(weight.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }
}

impl Layer for Dense {
    fn name(&self) -> String {
        format!("dense({}->{})", self.weight.shape()[1], self.weight.shape()[0])
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let (_, features) = input.matrix_dims()?;
        if features != self.weight.shape()[1] {
            return Err(Error::Dimension(format!(
                "dense layer expects {} features, got {features}",
                self.weight.shape()[1]
            )));
        }
        let mut out = matmul_a_bt(input, &self.weight)?;
        let outputs = self.bias.len();
        for row in out.data_mut().chunks_exact_mut(outputs) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        grad_out.expect_shape(&[input.shape()[0], self.bias.len()], "dense upstream gradient")?;
        self.weight_grad.add_assign(&matmul_at_b(grad_out, input)?)?;
        let outputs = self.bias.len();
        for row in grad_out.data().chunks_exact(outputs) {
            for (g, v) in self.bias_grad.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        matmul(grad_out, &self.weight)
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn grads(&self) -> Vec<&Tensor> {
        vec![&self.weight_grad, &self.bias_grad]
    }

    fn params_mut(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                value: &mut self.weight,
                grad: &mut self.weight_grad,
                role: ParamRole::Weight,
            },
            Param {
                value: &mut self.bias,
                grad: &mut self.bias_grad,
                role: ParamRole::Bias,
            },
        ]
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn name(&self) -> String {
        "relu".into()
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        self.mask = Some(input.data().iter().map(|&v| v > 0.0).collect());
        Ok(input.map(|v| v.max(0.0)))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if mask.len() != grad_out.len() {
            return Err(Error::Dimension("relu upstream gradient size mismatch".into()));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad_out.shape(), data)
    }

    fn branch_pattern(&self) -> Vec<usize> {
        self.mask.iter().flatten().map(|&m| m as usize).collect()
    }
}

/// Collapses all but the batch axis.
#[derive(Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn name(&self) -> String {
        "flatten".into()
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let batch = input.shape()[0];
        self.input_shape = Some(input.shape().to_vec());
        input.clone().reshape(&[batch, input.len() / batch])
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("flatten backward called before forward".into()))?;
        grad_out.clone().reshape(shape)
    }
}
