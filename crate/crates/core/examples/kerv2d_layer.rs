//! One kervolutional layer used directly: forward, backward, and a few SGD
//! steps on a learnable polynomial balance c_p.

use kervolution::layers::Layer;
use kervolution::{KernelSpec, Kerv2d, Kerv2dConfig, PatchGeometry, Tensor};

fn main() -> kervolution::Result<()> {
    let input = Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, 7)?;
    let geom = PatchGeometry::new(3, 3).with_pad(1, 1);

    for spec in [
        "linear",
        "polynomial(dp=3,cp=1)",
        "gaussian(gamma=0.5)",
        "l1",
        "l2",
        "sigmoid",
    ] {
        let spec: KernelSpec = spec.parse()?;
        let mut layer = Kerv2d::new(Kerv2dConfig::new(3, 4, geom, spec), 0)?;
        let out = layer.forward(&input, true)?;
        let grad_in = layer.backward(&Tensor::full(out.shape(), 1.0))?;
        println!(
            "{:<24} out {:?} mean {:+.4}  |dL/dx| {:.4}  |dL/dw| {:.4}",
            spec.to_string(),
            out.shape(),
            out.sum() / out.len() as f64,
            grad_in.dot(&grad_in)?.sqrt(),
            layer.weight_grad().dot(layer.weight_grad())?.sqrt()
        );
    }

    // push c_p so that the mean response approaches a target
    let spec = KernelSpec::polynomial(2, 0.5).learnable();
    let mut layer = Kerv2d::new(Kerv2dConfig::new(3, 4, geom, spec).with_bias(false), 0)?;
    let target = 2.0;
    for step in 0..8 {
        layer.zero_grad();
        let out = layer.forward(&input, true)?;
        let mean = out.sum() / out.len() as f64;
        let g = 2.0 * (mean - target) / out.len() as f64;
        layer.backward(&Tensor::full(out.shape(), g))?;
        let cp = layer.spec().hyper().unwrap_or_default();
        println!(
            "step {step}: mean {mean:.4}  c_p {cp:.4}  dL/dc_p {:+.4}",
            layer.hyper_grad()
        );
        layer.set_hyper(cp - 0.1 * layer.hyper_grad());
    }
    Ok(())
}
