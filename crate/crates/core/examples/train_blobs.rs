//! Trains a polynomial LeNet-5 on synthetic blobs; needs no downloads.

use kervolution::data::synthetic_blobs;
use kervolution::optim::SgdConfig;
use kervolution::train::{train, TrainOptions};
use kervolution::{build_lenet5, KernelSpec, ModelConfig};

fn main() -> kervolution::Result<()> {
    let train_set = synthetic_blobs(40, 4, 1)?;
    let val_set = synthetic_blobs(10, 4, 2)?;
    let mut model = build_lenet5(&ModelConfig::kerv_kerv(KernelSpec::polynomial(3, 1.0).learnable()))?;
    println!("{} parameters", model.param_count());

    let sgd = SgdConfig {
        lr: 0.001,
        max_epochs: 6,
        milestones: vec![4],
        ..SgdConfig::default()
    };
    let options = TrainOptions {
        batch_size: 10,
        target_acc: 0.95,
        ..TrainOptions::default()
    };
    let report = train(&mut model, &sgd, &train_set, &val_set, &options, |r| {
        println!(
            "epoch {}  loss {:.4}  train {:.3}  val {:.3}  c_p {:?}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.hypers
        )
    })?;
    print!("{}", report.summary_text());
    Ok(())
}
