//! Trains one LeNet-5 variant on MNIST and writes metrics and a checkpoint.
//!
//! cargo run --release --example train_mnist -- [data_dir] [kernel] [epochs]
//!
//! `kernel` is e.g. `linear` (plain CNN) or `polynomial(dp=3,cp=1)`.

use kervolution::commands::cmd_train;
use kervolution::config::RunConfig;

fn main() -> kervolution::Result<()> {
    let mut args = std::env::args().skip(1);
    let data_dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let kernel = args.next().unwrap_or_else(|| "polynomial(dp=3,cp=1)".into());
    let epochs = args.next().unwrap_or_else(|| "2".into());

    let arrangement = if kernel == "linear" { "conv-conv" } else { "kerv-kerv" };
    let config = RunConfig::default().with_overrides(&[
        format!("data_dir={data_dir}"),
        format!("arrangement={arrangement}"),
        format!("kernel1={kernel}"),
        format!("kernel2={kernel}"),
        format!("epochs={epochs}"),
        "milestones=".into(),
        format!("output_dir=runs/example-{arrangement}"),
    ])?;
    let outcome = cmd_train(&config, |line| println!("{line}"))?;
    print!("{}", outcome.report.summary_text());
    println!("wrote {}", outcome.output_dir.display());
    Ok(())
}
