//! Finite-difference gradient checks, then the same check with a
//! deliberately broken gradient to show how failures are reported.

use kervolution::gradcheck::{run_gradcheck, GradCheckOptions, Scope};

fn main() -> kervolution::Result<()> {
    let options = GradCheckOptions {
        instances: 20,
        ..GradCheckOptions::default()
    };
    for scope in [Scope::Kernels, Scope::Layers, Scope::Model] {
        let report = run_gradcheck(scope, &options)?;
        println!(
            "[{scope}] passed={} worst={:.2e}",
            report.passed(),
            report.worst_rel_err()
        );
    }

    let broken = GradCheckOptions {
        corrupt: Some("kernel/l2".into()),
        ..options
    };
    let report = run_gradcheck(Scope::Kernels, &broken)?;
    match report.into_result() {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted run rejected: {e}"),
    }
    Ok(())
}
