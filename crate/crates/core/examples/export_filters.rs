//! Trains a small polynomial network on blobs, saves it, and writes its
//! first-layer filters as PGM images.

use kervolution::commands::cmd_export_filters;
use kervolution::data::synthetic_blobs;
use kervolution::optim::SgdConfig;
use kervolution::train::{train, TrainOptions};
use kervolution::{build_lenet5, Checkpoint, KernelSpec, ModelConfig};

fn main() -> kervolution::Result<()> {
    let out = std::env::temp_dir().join("kerv-filters");
    let data = synthetic_blobs(30, 3, 4)?;
    let mut model = build_lenet5(&ModelConfig::kerv_conv(KernelSpec::polynomial(2, 0.5)))?;
    let sgd = SgdConfig {
        lr: 0.01,
        max_epochs: 3,
        milestones: vec![],
        ..SgdConfig::default()
    };
    let options = TrainOptions {
        batch_size: 10,
        ..TrainOptions::default()
    };
    train(&mut model, &sgd, &data, &data, &options, |_| {})?;

    std::fs::create_dir_all(&out).map_err(|e| kervolution::Error::io(&out, e))?;
    let ckpt = out.join("model.ckpt");
    Checkpoint::from_model(&model, data.normalization).save(&ckpt)?;
    for path in cmd_export_filters(&ckpt, 0, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}
