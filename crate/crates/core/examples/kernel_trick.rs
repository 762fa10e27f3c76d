//! The polynomial kernel (x·w + c)^2 equals an inner product of explicit
//! quadratic feature maps, without ever building them.

use kervolution::{kernel_forward, KernelSpec, Tensor};

/// φ(v) for (x·w + c)^2: the constant, scaled linear terms, squares and
/// scaled cross terms.
fn feature_map(v: &[f64], c: f64) -> Vec<f64> {
    let mut phi = vec![c];
    phi.extend(v.iter().map(|x| (2.0 * c).sqrt() * x));
    phi.extend(v.iter().map(|x| x * x));
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            phi.push(2f64.sqrt() * v[i] * v[j]);
        }
    }
    phi
}

fn main() -> kervolution::Result<()> {
    let c = 1.0;
    let x = Tensor::randn(&[4, 5], 1)?;
    let w = Tensor::randn(&[3, 5], 2)?;
    let (k, _) = kernel_forward(x.clone(), w.clone(), &KernelSpec::polynomial(2, c))?;

    println!("patch filter      kernel      explicit  dim(phi)");
    for p in 0..4 {
        for f in 0..3 {
            let (a, b) = (feature_map(x.row(p), c), feature_map(w.row(f), c));
            let explicit: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
            println!("{p:5} {f:6} {:11.6} {explicit:11.6} {:9}", k.data()[p * 3 + f], a.len());
        }
    }
    Ok(())
}
