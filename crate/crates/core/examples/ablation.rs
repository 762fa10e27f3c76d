//! Runs one ablation suite on an MNIST subset and prints the comparison
//! table.
//!
//! cargo run --release --example ablation -- [data_dir] [suite] [train_limit]
//!
//! Suites: kernels, hyperparams, arrangement, no-relu.

use kervolution::commands::{cmd_ablation, AblationSuite};
use kervolution::config::RunConfig;

fn main() -> kervolution::Result<()> {
    let mut args = std::env::args().skip(1);
    let data_dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let suite: AblationSuite = args.next().unwrap_or_else(|| "arrangement".into()).parse()?;
    let limit = args.next().unwrap_or_else(|| "5000".into());

    let base = RunConfig::default().with_overrides(&[
        format!("data_dir={data_dir}"),
        format!("train_limit={limit}"),
        "val_limit=2000".into(),
        "epochs=2".into(),
        "milestones=".into(),
        "output_dir=runs/example-ablation".into(),
    ])?;
    let table = cmd_ablation(suite, &base, |line| eprintln!("{line}"))?;
    print!("{}", table.to_csv());
    Ok(())
}
