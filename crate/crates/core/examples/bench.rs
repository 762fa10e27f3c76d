//! Kernel forward cost against convolution, and the Volterra quadratic
//! baseline whose cost grows with the square of the patch length.

use kervolution::bench::{run_case, BenchCase, BenchOp};
use kervolution::KernelKind;

fn main() -> kervolution::Result<()> {
    let linear = run_case(&BenchCase::new(BenchOp::Kernel(KernelKind::Linear), 25, 10_000, 16), 0)?.median_seconds;
    println!("n=25, 10000 patches, 16 filters");
    for kind in [
        KernelKind::Linear,
        KernelKind::Polynomial,
        KernelKind::Gaussian,
        KernelKind::Sigmoid,
        KernelKind::L2,
        KernelKind::L1,
    ] {
        let t = run_case(&BenchCase::new(BenchOp::Kernel(kind), 25, 10_000, 16), 0)?.median_seconds;
        println!("  {:<11} {:8.3} ms  x{:.2}", kind.name(), t * 1e3, t / linear);
    }

    println!("volterra, 1000 patches");
    let mut prev = None;
    for n in [16, 32, 64, 128] {
        let t = run_case(&BenchCase::new(BenchOp::Volterra2, n, 1_000, 16), 0)?.median_seconds;
        let growth = prev.map_or(String::new(), |p: f64| format!("  t(n)/t(n/2) {:.2}", t / p));
        println!("  n={n:<4} {:9.3} ms{growth}", t * 1e3);
        prev = Some(t);
    }
    Ok(())
}
