//! Mini-batch training loop with per-epoch records and time-to-accuracy.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::layers::softmax_cross_entropy;
use crate::model::{argmax_rows, Model};
use crate::optim::{Sgd, SgdConfig};

const EVAL_BATCH: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    /// Cumulative training-loop time; evaluation is not counted.
    pub wall_seconds: f64,
    /// Learnable kernel hyperparameters after this epoch, in layer order.
    pub hypers: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_to_target: Option<usize>,
    pub seconds_to_target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub target_acc: f64,
    /// Column names for [`EpochRecord::hypers`], e.g. `cp_layer0`.
    pub hyper_names: Vec<String>,
    pub rows: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn summary(&self) -> TrainSummary {
        let mut best = (0.0, 0);
        for r in &self.rows {
            if r.val_acc > best.0 {
                best = (r.val_acc, r.epoch);
            }
        }
        let hit = self.rows.iter().find(|r| r.val_acc >= self.target_acc);
        TrainSummary {
            best_val_acc: best.0,
            best_epoch: best.1,
            epochs_to_target: hit.map(|r| r.epoch),
            seconds_to_target: hit.map(|r| r.wall_seconds),
        }
    }

    /// Everything except wall time, so reruns compare byte for byte.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,lr");
        for name in &self.hyper_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{:.12},{:.6},{:.6},{:e}",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.lr
            );
            for h in &r.hypers {
                let _ = write!(out, ",{h:.12}");
            }
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.3}", r.epoch, r.wall_seconds);
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let s = self.summary();
        let fmt_opt = |v: Option<String>| v.unwrap_or_else(|| "never".into());
        format!(
            "best_val_acc={:.4} (epoch {})\nepochs_to_{t}={}\nseconds_to_{t}={}\n",
            s.best_val_acc,
            s.best_epoch,
            fmt_opt(s.epochs_to_target.map(|e| e.to_string())),
            fmt_opt(s.seconds_to_target.map(|t| format!("{t:.1}"))),
            t = self.target_acc,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub target_acc: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 50,
            shuffle_seed: 0,
            target_acc: 0.98,
        }
    }
}

/// Mean loss and accuracy over `dataset` in inference mode.
pub fn evaluate(model: &mut Model, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for (x, y) in crate::data::batches(dataset, &BatchPlan::sequential(EVAL_BATCH)) {
        let logits = model.forward(&x, false)?;
        let (l, _) = softmax_cross_entropy(&logits, &y)?;
        loss += l * y.len() as f64;
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    let n = dataset.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn hyper_names(model: &Model) -> Vec<String> {
    model
        .learnable_kernels()
        .iter()
        .map(|(i, spec)| match spec.kind() {
            KernelKind::Gaussian => format!("gamma_layer{i}"),
            _ => format!("cp_layer{i}"),
        })
        .collect()
}

fn hyper_values(model: &Model) -> Vec<f64> {
    model
        .learnable_kernels()
        .iter()
        .filter_map(|(_, s)| s.hyper())
        .collect()
}

/// Trains for `sgd.max_epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    model: &mut Model,
    sgd: &SgdConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut opt = Sgd::new(sgd.clone())?;
    let mut report = TrainReport {
        target_acc: options.target_acc,
        hyper_names: hyper_names(model),
        rows: Vec::with_capacity(sgd.max_epochs),
    };
    let mut train_seconds = 0.0;

    for epoch in 0..sgd.max_epochs {
        let lr = sgd.lr_at_epoch(epoch);
        let plan = BatchPlan::new(options.batch_size, options.shuffle_seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let start = Instant::now();
        for (b, idx) in plan.index_batches(train_set.len()).iter().enumerate() {
            let (x, y) = train_set.batch(idx);
            model.zero_grad();
            let diverged = |loss| Error::Divergence {
                epoch: epoch + 1,
                batch: b,
                loss,
            };
            // non-finite activations surface as numeric errors inside the layers
            let logits = match model.forward(&x, true) {
                Err(Error::Numeric(_)) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            loss_sum += loss * y.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            model.backward(&grad)?;
            opt.step(model.params_mut(), lr)?;
        }
        train_seconds += start.elapsed().as_secs_f64();

        let (_, val_acc) = evaluate(model, val_set)?;
        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc,
            lr,
            wall_seconds: train_seconds,
            hypers: hyper_values(model),
        };
        on_epoch(&record);
        report.rows.push(record);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::kernels::KernelSpec;
    use crate::model::{build_lenet5, ModelConfig};

    fn short_sgd(epochs: usize) -> SgdConfig {
        SgdConfig {
            lr: 0.01,
            milestones: vec![],
            max_epochs: epochs,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn summary_follows_rows() {
        let row = |epoch, val_acc, wall_seconds| EpochRecord {
            epoch,
            train_loss: 0.0,
            train_acc: 0.0,
            val_acc,
            lr: 0.1,
            wall_seconds,
            hypers: vec![],
        };
        let report = TrainReport {
            target_acc: 0.9,
            hyper_names: vec![],
            rows: vec![
                row(1, 0.5, 1.0),
                row(2, 0.92, 2.0),
                row(3, 0.91, 3.0),
                row(4, 0.95, 4.0),
            ],
        };
        let s = report.summary();
        assert_eq!((s.best_val_acc, s.best_epoch), (0.95, 4));
        assert_eq!(s.epochs_to_target, Some(2));
        assert_eq!(s.seconds_to_target, Some(2.0));
    }

    #[test]
    fn blobs_training_is_deterministic_and_records_hypers() {
        let data = synthetic_blobs(6, 3, 4).unwrap();
        let cfg = ModelConfig::kerv_kerv(KernelSpec::polynomial(2, 1.0).learnable());
        let run = || {
            let mut model = build_lenet5(&cfg).unwrap();
            train(
                &mut model,
                &short_sgd(2),
                &data,
                &data,
                &TrainOptions {
                    batch_size: 6,
                    ..Default::default()
                },
                |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.hyper_names, vec!["cp_layer0", "cp_layer3"]);
        assert!(a
            .metrics_csv()
            .starts_with("epoch,train_loss,train_acc,val_acc,lr,cp_layer0,cp_layer3\n1,"));
        assert_eq!(a.rows.len(), 2);
        assert!(a.rows.iter().all(|r| r.hypers.len() == 2));
    }

    #[test]
    fn divergence_is_located() {
        let data = synthetic_blobs(4, 2, 0).unwrap();
        let mut model = build_lenet5(&ModelConfig::default()).unwrap();
        model.params_mut().last_mut().unwrap().value.data_mut()[0] = f64::NAN;
        let err = train(
            &mut model,
            &short_sgd(3),
            &data,
            &data,
            &TrainOptions {
                batch_size: 4,
                ..Default::default()
            },
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, batch: 0, .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}
