//! The operations behind each `kerv` subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adversarial::{evaluate_attack, AttackConfig, AttackTable};
use crate::bench::{run_bench, BenchCase, BenchTable};
use crate::config::RunConfig;
use crate::data::{find_mnist_file, load_mnist_dir_scaled, load_mnist_idx, Dataset, MNIST_FILES};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradCheckOptions, GradCheckReport, Scope};
use crate::kernels::KernelSpec;
use crate::model::{build_lenet5, Arrangement, Checkpoint, Model, ModelConfig};
use crate::train::{evaluate, train, EpochRecord, TrainOptions, TrainReport};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.txt";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Training and validation splits for `config`, truncated to the configured
/// limits.
pub fn load_run_data(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (mut train_set, mut val_set) = load_mnist_dir_scaled(&config.data_dir, config.input_scaling)?;
    if config.train_limit > 0 {
        train_set = train_set.take(config.train_limit);
    }
    if config.val_limit > 0 {
        val_set = val_set.take(config.val_limit);
    }
    Ok((train_set, val_set))
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
    pub output_dir: PathBuf,
}

/// Trains one model on the given splits and writes metrics, timing, the
/// resolved config, a summary and the final checkpoint into `output_dir`.
pub fn train_on(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut log: impl FnMut(&str),
) -> Result<TrainOutcome> {
    config.validate()?;
    let out = &config.output_dir;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), config.to_text())?;

    let mut model = build_lenet5(&config.model)?;
    log(&format!(
        "model {} ({} / {}), {} parameters, {} training samples",
        config.model.arrangement,
        config.model.effective_kernel(0),
        config.model.effective_kernel(1),
        model.param_count(),
        train_set.len()
    ));
    let options = TrainOptions {
        batch_size: config.batch_size,
        shuffle_seed: config.model.seed,
        target_acc: config.target_acc,
    };
    let report = train(
        &mut model,
        &config.sgd,
        train_set,
        val_set,
        &options,
        |r: &EpochRecord| {
            log(&format!(
                "epoch {:2}  loss {:.4}  train {:.4}  val {:.4}  lr {:.1e}  {:.1}s{}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                r.val_acc,
                r.lr,
                r.wall_seconds,
                if r.hypers.is_empty() {
                    String::new()
                } else {
                    format!("  hyper {:?}", r.hypers)
                }
            ))
        },
    )?;

    write(&out.join(METRICS_FILE), report.metrics_csv())?;
    write(&out.join(TIMING_FILE), report.timing_csv())?;
    write(&out.join(SUMMARY_FILE), report.summary_text())?;
    Checkpoint::from_model(&model, train_set.normalization).save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome {
        report,
        model,
        output_dir: out.clone(),
    })
}

pub fn cmd_train(config: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainOutcome> {
    let (train_set, val_set) = load_run_data(config)?;
    log(&format!(
        "loaded {} training / {} validation images",
        train_set.len(),
        val_set.len()
    ));
    train_on(config, &train_set, &val_set, log)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationSuite {
    Kernels,
    Hyperparams,
    Arrangement,
    NoRelu,
}

impl std::str::FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernels" => Ok(Self::Kernels),
            "hyperparams" => Ok(Self::Hyperparams),
            "arrangement" => Ok(Self::Arrangement),
            "no-relu" => Ok(Self::NoRelu),
            other => Err(Error::Argument(format!(
                "unknown ablation suite `{other}` (kernels, hyperparams, arrangement, no-relu)"
            ))),
        }
    }
}

/// Named model configurations trained by a suite. Seeds come from `base`.
pub fn ablation_grid(suite: AblationSuite, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let poly = KernelSpec::polynomial(3, 1.0);
    let kk = |spec: KernelSpec| ModelConfig {
        seed: base.seed,
        ..ModelConfig::kerv_kerv(spec)
    };
    let kc = |spec: KernelSpec| ModelConfig {
        seed: base.seed,
        ..ModelConfig::kerv_conv(spec)
    };
    let cnn = ModelConfig {
        seed: base.seed,
        ..ModelConfig::default()
    };
    match suite {
        AblationSuite::Kernels => vec![
            ("linear".into(), cnn),
            ("polynomial".into(), kk(poly)),
            ("gaussian".into(), kk(KernelSpec::gaussian(1.0))),
            ("sigmoid".into(), kk(KernelSpec::Sigmoid)),
            // distance features carry a large common offset; stacked twice
            // the dense layers stall at chance under the shared recipe
            ("l1".into(), kc(KernelSpec::L1)),
            ("l2".into(), kc(KernelSpec::L2)),
        ],
        AblationSuite::Hyperparams => {
            let mut grid: Vec<(String, ModelConfig)> = [(2, 0.5), (2, 1.0), (3, 0.5), (3, 1.0)]
                .into_iter()
                .map(|(d, c)| (format!("poly-d{d}-c{c}"), kk(KernelSpec::polynomial(d, c))))
                .collect();
            grid.push(("poly-d3-c1-learn".into(), kk(poly.learnable())));
            grid
        }
        AblationSuite::Arrangement => Arrangement::ALL
            .into_iter()
            .map(|arrangement| {
                (
                    arrangement.to_string(),
                    ModelConfig {
                        arrangement,
                        ..kk(poly)
                    },
                )
            })
            .collect(),
        AblationSuite::NoRelu => vec![
            ("cnn-norelu".into(), cnn.without_relu()),
            (
                "gaussian-poly-norelu".into(),
                ModelConfig {
                    kernel1: KernelSpec::gaussian(1.0),
                    ..kk(poly).without_relu()
                },
            ),
            ("poly-poly-norelu".into(), kk(poly).without_relu()),
        ],
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub config: ModelConfig,
    pub params: usize,
    pub report: TrainReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str =
        "config,kernel1,kernel2,params,best_val_acc,best_epoch,epochs_to_target,seconds_to_target";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let s = r.report.summary();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{},{}",
                r.name,
                csv_field(&r.config.effective_kernel(0).to_string()),
                csv_field(&r.config.effective_kernel(1).to_string()),
                r.params,
                s.best_val_acc,
                s.best_epoch,
                s.epochs_to_target.map_or(String::new(), |e| e.to_string()),
                s.seconds_to_target.map_or(String::new(), |t| format!("{t:.1}")),
            );
        }
        out
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Trains every configuration of `suite` with `base`'s optimizer and data
/// settings, each into its own subdirectory of `base.output_dir`.
pub fn ablation_on(
    suite: AblationSuite,
    base: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut log: impl FnMut(&str),
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, model) in ablation_grid(suite, &base.model) {
        log(&format!("== {name}"));
        let config = RunConfig {
            model,
            output_dir: base.output_dir.join(&name),
            ..base.clone()
        };
        let outcome = train_on(&config, train_set, val_set, &mut log)?;
        rows.push(AblationRow {
            name,
            config: model,
            params: outcome.model.param_count(),
            report: outcome.report,
        });
    }
    let table = AblationTable { rows };
    write(&base.output_dir.join("ablation.csv"), table.to_csv())?;
    Ok(table)
}

pub fn cmd_ablation(suite: AblationSuite, base: &RunConfig, log: impl FnMut(&str)) -> Result<AblationTable> {
    let (train_set, val_set) = load_run_data(base)?;
    ablation_on(suite, base, &train_set, &val_set, log)
}

/// The official test split, normalized with the statistics stored in the
/// checkpoint.
pub fn load_test_split(data_dir: &Path, checkpoint: &Checkpoint) -> Result<Dataset> {
    load_mnist_idx(
        &find_mnist_file(data_dir, MNIST_FILES[2])?,
        &find_mnist_file(data_dir, MNIST_FILES[3])?,
        Some(checkpoint.normalization),
    )
}

/// Test loss and accuracy of a saved model.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path) -> Result<(f64, f64)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let test = load_test_split(data_dir, &ckpt)?;
    let mut model = ckpt.into_model()?;
    evaluate(&mut model, &test)
}

/// Display name for a checkpoint: its run directory for `.../name/model.ckpt`,
/// otherwise the file stem.
pub fn checkpoint_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    match (stem, path.parent().and_then(Path::file_name).and_then(|s| s.to_str())) {
        ("model", Some(dir)) => dir.to_string(),
        _ => stem.to_string(),
    }
}

/// Attacks each checkpoint on the same seeded test sample. The test split is
/// normalized with the first checkpoint's statistics; all checkpoints must
/// share them.
pub fn cmd_attack(checkpoints: &[PathBuf], data_dir: &Path, config: &AttackConfig) -> Result<AttackTable> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::Argument("attack needs at least one checkpoint".into()));
    };
    let reference = Checkpoint::load(first)?;
    let test = load_test_split(data_dir, &reference)?;
    let mut models = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.normalization != reference.normalization {
            return Err(Error::Data(format!(
                "{} was trained with different input normalization than {}",
                path.display(),
                first.display()
            )));
        }
        models.push((checkpoint_name(path), ckpt.into_model()?));
    }
    evaluate_attack(&mut models, &test, config)
}

pub fn cmd_gradcheck(scope: Scope, options: &GradCheckOptions) -> Result<GradCheckReport> {
    run_gradcheck(scope, options)
}

/// Min-max maps `values` onto `0..=255`; a constant filter becomes 128.
pub fn filter_to_gray(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary (`P5`, maxval 255) PGM into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |found: String| Error::Format {
        what: "PGM".into(),
        expected: "P5 <width> <height> 255".into(),
        found,
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Length("PGM header is truncated".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad(format!("{} .. maxval {}", fields[0], fields[3])));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("dimension `{s}`")));
    let (w, h) = (dim(&fields[1])?, dim(&fields[2])?);
    let pixels = bytes.get(pos..).unwrap_or_default();
    if pixels.len() != w * h {
        return Err(Error::Length(format!(
            "PGM body has {} bytes, header says {}",
            pixels.len(),
            w * h
        )));
    }
    Ok((w, h, pixels.to_vec()))
}

/// Writes one PGM per (output, input) channel of layer `layer_index`'s
/// filter bank. Returns the written paths in channel order.
pub fn export_filters(model: &Model, layer_index: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let layer = model.layers().get(layer_index).ok_or_else(|| {
        Error::Argument(format!(
            "layer {layer_index} out of range (model has {})",
            model.layers().len()
        ))
    })?;
    let filters = layer
        .filters()
        .filter(|f| f.rank() == 4)
        .ok_or_else(|| Error::Argument(format!("layer {layer_index} ({}) has no 2-D filters", layer.name())))?;
    let &[outs, ins, kh, kw] = filters.shape() else {
        unreachable!("rank checked above")
    };
    create_dir(out_dir)?;
    let mut paths = Vec::with_capacity(outs * ins);
    for (i, filter) in filters.data().chunks_exact(kh * kw).enumerate() {
        let path = out_dir.join(format!("layer{layer_index}_out{}_in{}.pgm", i / ins, i % ins));
        write(&path, encode_pgm(kw, kh, &filter_to_gray(filter)))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_export_filters(checkpoint: &Path, layer_index: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    export_filters(&model, layer_index, out_dir)
}

pub fn cmd_bench(cases: &[BenchCase]) -> Result<BenchTable> {
    run_bench(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;

    #[test]
    fn gray_mapping() {
        assert_eq!(filter_to_gray(&[0.5; 4]), vec![128; 4]);
        assert_eq!(filter_to_gray(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..15).collect();
        let bytes = encode_pgm(5, 3, &px);
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), (5, 3, px));
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00"), Err(Error::Length(_))));
    }

    #[test]
    fn export_rejects_layers_without_filters() {
        let model = build_lenet5(&ModelConfig::default()).unwrap();
        let dir = std::env::temp_dir().join("kerv-export-test-unused");
        let err = export_filters(&model, 1, &dir).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        assert!(export_filters(&model, 99, &dir).is_err());
    }

    #[test]
    fn suites_have_the_expected_grids() {
        let base = ModelConfig::default();
        assert_eq!(ablation_grid(AblationSuite::Kernels, &base).len(), 6);
        assert_eq!(ablation_grid(AblationSuite::Hyperparams, &base).len(), 5);
        assert_eq!(ablation_grid(AblationSuite::Arrangement, &base).len(), 4);
        let norelu = ablation_grid(AblationSuite::NoRelu, &base);
        assert!(norelu.iter().all(|(_, c)| !c.use_relu));
        assert!("dropout".parse::<AblationSuite>().is_err());
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(Path::new("runs/l2/model.ckpt")), "l2");
        assert_eq!(checkpoint_name(Path::new("runs/cnn.ckpt")), "cnn");
    }

    #[test]
    fn ablation_table_quotes_parameterized_kernels() {
        let data = synthetic_blobs(2, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut base = RunConfig {
            output_dir: dir.path().to_path_buf(),
            batch_size: 4,
            ..RunConfig::default()
        };
        base.sgd.max_epochs = 1;
        let table = ablation_on(AblationSuite::Hyperparams, &base, &data, &data, |_| {}).unwrap();
        let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert_eq!(csv, table.to_csv());
        let line = csv.lines().nth(1).unwrap();
        assert!(
            line.starts_with("poly-d2-c0.5,\"polynomial(dp=2,cp=0.5)\",\"polynomial(dp=2,cp=0.5)\",61706,"),
            "{line}"
        );
        assert!(dir.path().join("poly-d3-c1-learn").join(METRICS_FILE).exists());
    }
}
