use crate::error::{Error, Result};
use crate::patch::PatchGeometry;
use crate::tensor::Tensor;

use super::Layer;

fn pool_dims(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::Dimension(format!(
            "pooling expects NxCxHxW input, got {:?}",
            input.shape()
        )));
    };
    let (oh, ow) = PatchGeometry::new(window, window)
        .with_stride(stride, stride)
        .output_size(h, w)?;
    Ok((n, c, h, w, oh, ow))
}

/// Max pooling; ties route the gradient to the first maximum in row-major order.
pub struct MaxPool2d {
    window: usize,
    stride: usize,
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            argmax: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn name(&self) -> String {
        format!("maxpool({}x{}/{})", self.window, self.window, self.stride)
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let (n, c, h, w, oh, ow) = pool_dims(input, self.window, self.stride)?;
        let src = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + y * self.stride * w + x * self.stride;
                    for i in 0..self.window {
                        for j in 0..self.window {
                            let at = base + (y * self.stride + i) * w + x * self.stride + j;
                            if src[at] > src[best] {
                                best = at;
                            }
                        }
                    }
                    out.push(src[best]);
                    idx.push(best);
                }
            }
        }
        self.argmax = Some((idx, input.shape().to_vec()));
        Tensor::new(&[n, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (idx, shape) = self
            .argmax
            .as_ref()
            .ok_or_else(|| Error::State("maxpool backward called before forward".into()))?;
        if grad_out.len() != idx.len() {
            return Err(Error::Dimension("maxpool upstream gradient size mismatch".into()));
        }
        let mut grad_in = Tensor::zeros(shape);
        let gi = grad_in.data_mut();
        for (&at, &g) in idx.iter().zip(grad_out.data()) {
            gi[at] += g;
        }
        Ok(grad_in)
    }

    fn branch_pattern(&self) -> Vec<usize> {
        self.argmax.as_ref().map(|(idx, _)| idx.clone()).unwrap_or_default()
    }
}

pub struct AvgPool2d {
    window: usize,
    stride: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            input_shape: None,
        }
    }
}

impl Layer for AvgPool2d {
    fn name(&self) -> String {
        format!("avgpool({}x{}/{})", self.window, self.window, self.stride)
    }

    fn forward(&mut self, input: &Tensor, _train: bool) -> Result<Tensor> {
        let (n, c, h, w, oh, ow) = pool_dims(input, self.window, self.stride)?;
        let scale = 1.0 / (self.window * self.window) as f64;
        let src = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..self.window {
                        let row = base + (y * self.stride + i) * w + x * self.stride;
                        acc += src[row..row + self.window].iter().sum::<f64>();
                    }
                    out.push(acc * scale);
                }
            }
        }
        self.input_shape = Some(input.shape().to_vec());
        Tensor::new(&[n, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("avgpool backward called before forward".into()))?;
        let &[n, c, h, w] = shape.as_slice() else {
            unreachable!()
        };
        let (oh, ow) = PatchGeometry::new(self.window, self.window)
            .with_stride(self.stride, self.stride)
            .output_size(h, w)?;
        grad_out.expect_shape(&[n, c, oh, ow], "avgpool upstream gradient")?;
        let scale = 1.0 / (self.window * self.window) as f64;
        let mut grad_in = Tensor::zeros(shape);
        let gi = grad_in.data_mut();
        let go = grad_out.data();
        for plane in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    let g = go[(plane * oh + y) * ow + x] * scale;
                    for i in 0..self.window {
                        let row = plane * h * w + (y * self.stride + i) * w + x * self.stride;
                        gi[row..row + self.window].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
        Ok(grad_in)
    }
}
