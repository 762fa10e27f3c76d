//! Circular padding with stride 1 makes kervolution commute with cyclic
//! shifts, for every kernel.

use kervolution::layers::Layer;
use kervolution::{KernelSpec, Kerv2d, Kerv2dConfig, PaddingMode, PatchGeometry, Tensor};

fn roll(t: &Tensor, dy: usize, dx: usize) -> Tensor {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    let mut out = Tensor::zeros(s);
    for plane in 0..s[0] * s[1] {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[plane * h * w + ((y + dy) % h) * w + (x + dx) % w] = t.data()[plane * h * w + y * w + x];
            }
        }
    }
    out
}

fn main() -> kervolution::Result<()> {
    let input = Tensor::randn(&[1, 3, 9, 9], 3)?;
    let geom = PatchGeometry::new(3, 3)
        .with_pad(1, 1)
        .with_padding_mode(PaddingMode::Circular);
    for spec in [
        "linear",
        "polynomial(dp=3,cp=1)",
        "gaussian(gamma=0.1)",
        "l1",
        "l2",
        "sigmoid",
    ] {
        let spec: KernelSpec = spec.parse()?;
        let mut layer = Kerv2d::new(Kerv2dConfig::new(3, 4, geom, spec), 11)?;
        let mut worst: f64 = 0.0;
        for (dy, dx) in [(1, 0), (0, 2), (4, 7), (8, 8)] {
            let a = layer.forward(&roll(&input, dy, dx), false)?;
            let b = roll(&layer.forward(&input, false)?, dy, dx);
            worst = worst.max(a.max_abs_diff(&b));
        }
        println!("{:<24} max |f(shift x) - shift f(x)| = {worst:.2e}", spec.to_string());
    }
    Ok(())
}
