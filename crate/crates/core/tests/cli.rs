mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kervolution::commands::decode_pgm;

fn kerv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerv")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train_args<'a>(data: &'a str, out_dir: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = ["train", "--set"].iter().map(|s| s.to_string()).collect();
    args.push(format!("data_dir={data}"));
    for kv in ["epochs=2", "milestones=1", "batch_size=20", "attack_samples=50"] {
        args.push("--set".into());
        args.push(kv.into());
    }
    args.push("--set".into());
    args.push(format!("output_dir={out_dir}"));
    for kv in extra {
        args.push("--set".into());
        args.push(kv.to_string());
    }
    args
}

fn run_train(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let args = train_args(data.to_str().unwrap(), out_dir.to_str().unwrap(), extra);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    kerv(&args)
}

#[test]
fn bad_config_and_missing_data_have_distinct_exit_codes() {
    let out = kerv(&["train", "--set", "no_such_key=1"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = kerv(&["train", "--set", "kernel1=polynomial(dp=0)"]);
    assert_eq!(code(&out), 2);
    let out = kerv(&["train", "--set", "data_dir=/definitely/not/here"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-images-idx3-ubyte"));
    let out = kerv(&["ablation", "bogus"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_attack_and_export_on_fake_mnist() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    common::fake_mnist(&data, 20, 5);

    let cnn = tmp.path().join("cnn");
    let out = run_train(&data, &cnn, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "timing.csv", "config.txt", "model.ckpt", "summary.txt"] {
        assert!(cnn.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(cnn.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,train_loss,train_acc,val_acc,lr\n"));
    assert!(fs::read_to_string(cnn.join("config.txt"))
        .unwrap()
        .contains("input_scaling=unit"));

    // same config, same seed: identical metrics
    let again = tmp.path().join("cnn-again");
    assert_eq!(code(&run_train(&data, &again, &[])), 0);
    assert_eq!(metrics, fs::read_to_string(again.join("metrics.csv")).unwrap());

    let l2 = tmp.path().join("l2");
    let out = run_train(&data, &l2, &["arrangement=kerv-conv", "kernel1=l2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let data_s = data.to_str().unwrap();
    let ckpt = |d: &Path| d.join("model.ckpt").to_str().unwrap().to_string();
    let out = kerv(&["eval", "--checkpoint", &ckpt(&cnn), "--data-dir", data_s]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("test_acc="));

    let csv_path = tmp.path().join("attack.csv");
    let out = kerv(&[
        "attack",
        "--checkpoint",
        &ckpt(&cnn),
        "--checkpoint",
        &ckpt(&l2),
        "--data-dir",
        data_s,
        "--samples",
        "50",
        "--epsilon",
        "0",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv, stdout(&out));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[3], f[4], "epsilon 0 must not change accuracy: {row}");
    }

    let pgm_dir = tmp.path().join("filters");
    let out = kerv(&[
        "export-filters",
        "--checkpoint",
        &ckpt(&l2),
        "--layer",
        "0",
        "--out-dir",
        pgm_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let files: Vec<_> = fs::read_dir(&pgm_dir).unwrap().collect();
    assert_eq!(files.len(), 6);
    for f in files {
        let (w, h, px) = decode_pgm(&fs::read(f.unwrap().path()).unwrap()).unwrap();
        assert_eq!((w, h, px.len()), (5, 5, 25));
    }
    let out = kerv(&[
        "export-filters",
        "--checkpoint",
        &ckpt(&l2),
        "--layer",
        "1",
        "--out-dir",
        pgm_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "relu has no filters");
}

#[test]
fn divergence_exits_with_its_own_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    common::fake_mnist(&data, 5, 2);
    let out = run_train(
        &data,
        &tmp.path().join("run"),
        &[
            "input_scaling=standardize",
            "lr=0.01",
            "batch_size=10",
            "arrangement=kerv-kerv",
            "kernel1=polynomial(dp=3,cp=1)",
            "kernel2=polynomial(dp=3,cp=1)",
        ],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverge"));
}

#[test]
fn gradcheck_and_bench_commands() {
    let out = kerv(&["gradcheck", "--scope", "kernels", "--instances", "5"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("[kernels]"));
    let out = kerv(&["gradcheck", "--scope", "everything"]);
    assert_eq!(code(&out), 2);

    let out = kerv(&[
        "bench",
        "--op",
        "polynomial",
        "--n",
        "9",
        "--patches",
        "200",
        "--filters",
        "4",
        "--reps",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("polynomial,9,200,4"), "{text}");
}
