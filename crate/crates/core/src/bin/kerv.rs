#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kervolution::adversarial::AttackConfig;
use kervolution::bench::{default_cases, BenchCase, BenchOp};
use kervolution::commands::{
    cmd_ablation, cmd_attack, cmd_bench, cmd_eval, cmd_export_filters, cmd_gradcheck, cmd_train, AblationSuite,
};
use kervolution::config::RunConfig;
use kervolution::gradcheck::{GradCheckOptions, Scope};
use kervolution::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kerv",
    version,
    about = "Kervolutional LeNet-5 on MNIST: train, evaluate, attack, check, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set kernel1=polynomial(dp=3,cp=1)`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                RunConfig::from_text(&text)?
            }
            None => RunConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, config and checkpoint
    Train(ConfigArgs),
    /// Train a comparison grid: kernels, hyperparams, arrangement or no-relu
    Ablation {
        suite: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Test-set loss and accuracy of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
    },
    /// White-box FGSM against one or more checkpoints
    Attack {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Perturbation in raw [0, 1] pixel units
        #[arg(long, default_value_t = AttackConfig::default().epsilon)]
        epsilon: f64,
        #[arg(long, default_value_t = AttackConfig::default().sample_count)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV table here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks
    Gradcheck {
        /// kernels, layers, model or all
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a layer's filters as PGM images
    ExportFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time kernel forward passes against linear and Volterra baselines
    Bench {
        /// Run a single case instead of the default grid
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        patches: usize,
        #[arg(long, default_value_t = 16)]
        filters: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(path) = path {
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let outcome = cmd_train(&config, log)?;
            print!("{}", outcome.report.summary_text());
            println!("outputs in {}", outcome.output_dir.display());
        }
        Command::Ablation { suite, config } => {
            let suite: AblationSuite = suite.parse()?;
            let table = cmd_ablation(suite, &config.resolve()?, log)?;
            print!("{}", table.to_csv());
        }
        Command::Eval { checkpoint, data_dir } => {
            let (loss, acc) = cmd_eval(&checkpoint, &data_dir)?;
            println!("test_loss={loss:.6}\ntest_acc={acc:.6}");
        }
        Command::Attack {
            checkpoints,
            data_dir,
            epsilon,
            samples,
            seed,
            out,
        } => {
            let config = AttackConfig {
                epsilon,
                sample_count: samples,
                seed,
            };
            let csv = cmd_attack(&checkpoints, &data_dir, &config)?.to_csv();
            print!("{csv}");
            write_out(out.as_deref(), &csv)?;
        }
        Command::Gradcheck { scope, instances, seed } => {
            let scopes = match scope.as_str() {
                "all" => vec![Scope::Kernels, Scope::Layers, Scope::Model],
                s => vec![s.parse()?],
            };
            let options = GradCheckOptions {
                instances,
                seed,
                ..GradCheckOptions::default()
            };
            let mut failed = None;
            for scope in scopes {
                let report = cmd_gradcheck(scope, &options)?;
                println!("[{scope}]");
                print!("{}", report.to_text());
                if let Err(e) = report.into_result() {
                    failed.get_or_insert(e);
                }
            }
            if let Some(e) = failed {
                return Err(e);
            }
        }
        Command::ExportFilters {
            checkpoint,
            layer,
            out_dir,
        } => {
            for path in cmd_export_filters(&checkpoint, layer, &out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Bench {
            op,
            n,
            patches,
            filters,
            reps,
            out,
        } => {
            let cases = match op {
                Some(op) => vec![BenchCase {
                    reps,
                    ..BenchCase::new(op.parse::<BenchOp>()?, n, patches, filters)
                }],
                None => default_cases(),
            };
            let csv = cmd_bench(&cases)?.to_csv();
            print!("{csv}");
            write_out(out.as_deref(), &csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
