mod common;

use kervolution::commands::{ablation_on, AblationSuite};
use kervolution::config::RunConfig;
use kervolution::data::synthetic_blobs;
use kervolution::optim::SgdConfig;
use kervolution::train::{evaluate, train, TrainOptions};
use kervolution::{build_lenet5, Checkpoint, KernelSpec, ModelConfig};

fn sgd(epochs: usize) -> SgdConfig {
    SgdConfig {
        max_epochs: epochs,
        milestones: vec![],
        ..SgdConfig::default()
    }
}

fn options(batch_size: usize) -> TrainOptions {
    TrainOptions {
        batch_size,
        ..TrainOptions::default()
    }
}

#[test]
fn two_class_blobs_are_fitted_within_five_epochs() {
    let data = synthetic_blobs(100, 2, 3).unwrap();
    let configs = [
        ModelConfig::default(),
        ModelConfig::kerv_kerv(KernelSpec::polynomial(3, 1.0)),
        ModelConfig::kerv_conv(KernelSpec::L1),
        ModelConfig::kerv_conv(KernelSpec::L2),
    ];
    for cfg in configs {
        let mut model = build_lenet5(&cfg).unwrap();
        let report = train(&mut model, &sgd(5), &data, &data, &options(10), |_| {}).unwrap();
        let best_train = report.rows.iter().map(|r| r.train_acc).fold(0.0, f64::max);
        let (_, acc) = evaluate(&mut model, &data).unwrap();
        assert!(best_train == 1.0 || acc == 1.0, "{cfg:?}: {:?}", report.rows);
    }
}

#[test]
fn loss_traces_repeat_exactly_and_checkpoints_predict_identically() {
    let data = synthetic_blobs(10, 4, 5).unwrap();
    let cfg = ModelConfig::kerv_kerv(KernelSpec::polynomial(2, 0.5).learnable()).with_seed(42);
    let run = || {
        let mut model = build_lenet5(&cfg).unwrap();
        let report = train(&mut model, &sgd(3), &data, &data, &options(8), |_| {}).unwrap();
        (model, report)
    };
    let ((mut a, ra), (_, rb)) = (run(), run());
    assert_eq!(ra.metrics_csv(), rb.metrics_csv());

    let (x, _) = data.batch(&(0..data.len()).collect::<Vec<_>>());
    let before = a.forward(&x, false).unwrap();
    let mut restored = Checkpoint::from_bytes(&Checkpoint::from_model(&a, data.normalization).to_bytes())
        .unwrap()
        .into_model()
        .unwrap();
    assert_eq!(restored.forward(&x, false).unwrap(), before);
}

#[test]
fn ablation_suite_trains_every_config_and_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_blobs(8, 10, 1).unwrap();
    let base = RunConfig {
        sgd: sgd(1),
        batch_size: 20,
        output_dir: tmp.path().to_path_buf(),
        ..RunConfig::default()
    };
    let table = ablation_on(AblationSuite::NoRelu, &base, &data, &data, |_| {}).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["cnn-norelu", "gaussian-poly-norelu", "poly-poly-norelu"]);
    let csv = std::fs::read_to_string(tmp.path().join("ablation.csv")).unwrap();
    assert_eq!(csv, table.to_csv());
    for name in names {
        assert!(tmp.path().join(name).join("metrics.csv").exists());
    }
}
