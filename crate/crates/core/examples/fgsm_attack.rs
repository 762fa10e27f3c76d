//! White-box FGSM. With checkpoint paths it attacks those models on the
//! MNIST test split; without, it trains a CNN and an L2 network on blobs
//! and attacks both.
//!
//! cargo run --release --example fgsm_attack -- [data_dir ckpt...]

use std::path::PathBuf;

use kervolution::adversarial::{evaluate_attack, AttackConfig};
use kervolution::commands::cmd_attack;
use kervolution::data::synthetic_blobs;
use kervolution::optim::SgdConfig;
use kervolution::train::{train, TrainOptions};
use kervolution::{build_lenet5, KernelSpec, ModelConfig};

fn main() -> kervolution::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [data_dir, ckpts @ ..] = args.as_slice() {
        let ckpts: Vec<PathBuf> = ckpts.iter().map(PathBuf::from).collect();
        let table = cmd_attack(&ckpts, data_dir.as_ref(), &AttackConfig::default())?;
        print!("{}", table.to_csv());
        return Ok(());
    }

    let train_set = synthetic_blobs(50, 4, 1)?;
    let test_set = synthetic_blobs(25, 4, 9)?;
    let sgd = SgdConfig {
        lr: 0.01,
        max_epochs: 4,
        milestones: vec![],
        ..SgdConfig::default()
    };
    let options = TrainOptions {
        batch_size: 20,
        ..TrainOptions::default()
    };
    let mut models = Vec::new();
    for (name, cfg) in [
        ("conv-conv", ModelConfig::default()),
        ("l2-conv", ModelConfig::kerv_conv(KernelSpec::L2)),
    ] {
        let mut model = build_lenet5(&cfg)?;
        train(&mut model, &sgd, &train_set, &train_set, &options, |_| {})?;
        models.push((name.to_string(), model));
    }
    for epsilon in [0.0, 0.1, 0.3] {
        let config = AttackConfig {
            epsilon,
            sample_count: test_set.len(),
            seed: 0,
        };
        println!("epsilon {epsilon}");
        print!("{}", evaluate_attack(&mut models, &test_set, &config)?.to_csv());
    }
    Ok(())
}
