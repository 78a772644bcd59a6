//! End-to-end tests of the binary: every subcommand over a small synthetic
//! dataset, determinism of the primary outputs, and the error paths.

use std::path::Path;
use std::process::{Command, Output};

fn levembed(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levembed"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_small(dir: &Path) {
    let out = levembed(
        &[
            "gen-data",
            "--refs",
            "12",
            "--ref-len",
            "32",
            "--reads-per-ref",
            "4",
            "--rates",
            "0.02,0,0.02,0",
            "--split",
            "0.75",
            "--seed",
            "3",
            "--out",
            "data",
        ],
        dir,
    );
    assert_ok(&out);
}

#[test]
fn gen_data_writes_disjoint_one_to_one_datasets() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let data = dir.path().join("data");
    for name in ["train.csv", "test.csv", "manifest.json"] {
        assert!(data.join(name).exists(), "{name} missing");
    }
    // test datasets keep the one-to-one pairing; train files hold a 1:1 set of
    // distinct pairs before class balancing duplicates homologous rows
    let test = std::fs::read_to_string(data.join("test.csv")).unwrap();
    let (mut hom, mut nonhom) = (0, 0);
    for line in test.lines().skip(2) {
        match line.rsplit(',').next() {
            Some("1") => hom += 1,
            Some("0") => nonhom += 1,
            other => panic!("bad row ending {other:?}"),
        }
    }
    assert_eq!(hom, nonhom, "test set must pair 1:1");
    assert!(hom > 0);

    let train = std::fs::read_to_string(data.join("train.csv")).unwrap();
    let mut distinct_hom = std::collections::BTreeSet::new();
    let mut nonhom_rows = 0;
    for line in train.lines().skip(2) {
        if line.ends_with(",1") {
            distinct_hom.insert(line.to_string());
        } else {
            nonhom_rows += 1;
        }
    }
    assert_eq!(distinct_hom.len(), nonhom_rows, "distinct pairs stay 1:1");

    let manifest = std::fs::read_to_string(data.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"ok\""));
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let first_train = std::fs::read(dir.path().join("data/train.csv")).unwrap();
    let first_test = std::fs::read(dir.path().join("data/test.csv")).unwrap();
    gen_small(dir.path());
    assert_eq!(first_train, std::fs::read(dir.path().join("data/train.csv")).unwrap());
    assert_eq!(first_test, std::fs::read(dir.path().join("data/test.csv")).unwrap());
}

#[test]
fn gen_data_rejects_bad_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = levembed(
        &["gen-data", "--rates", "0.5,0.4,0.2,0", "--out", "data"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("exceeds 1"), "stderr: {stderr}");
    // the manifest still records the failed run
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.json")).unwrap();
    assert!(manifest.contains("error"));
}

#[test]
fn full_split_warns_and_writes_empty_test_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = levembed(
        &[
            "gen-data", "--refs", "8", "--ref-len", "32", "--reads-per-ref", "2",
            "--rates", "0.02,0,0.02,0", "--split", "1.0", "--seed", "1", "--out", "data",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let test = std::fs::read_to_string(dir.path().join("data/test.csv")).unwrap();
    let lines: Vec<&str> = test.lines().collect();
    assert_eq!(lines.len(), 2, "metadata and header only: {lines:?}");
}

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        "data",
        "--arch",
        "cnn-ed-5",
        "--dim",
        "8",
        "--fc-hidden",
        "16",
        "--epochs",
        "2",
        "--batch-size",
        "32",
        "--seed",
        "1",
        "--out",
        "run/model.ckpt",
    ];
    args.extend_from_slice(extra);
    levembed(&args, dir)
}

#[test]
fn train_eval_diagnose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    assert_ok(&train_small(dir.path(), &["--validate"]));
    let run = dir.path().join("run");
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("model.manifest.json").exists());
    let epochs = std::fs::read_to_string(run.join("model.epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,loss,seconds,ae,ae_h,oa"));
    assert_eq!(epochs.lines().count(), 3);
    // validation columns populated
    assert!(!epochs.lines().nth(1).unwrap().ends_with(",,,"));

    let out = levembed(
        &["eval", "--ckpt", "run/model.ckpt", "--data", "data", "--out", "evalout"],
        dir.path(),
    );
    assert_ok(&out);
    let metrics = std::fs::read_to_string(dir.path().join("evalout/metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value"));
    for key in ["ae,", "ae_h,", "oa_at_k,", "oa_best,", "k_best,"] {
        assert!(metrics.contains(key), "missing {key} in {metrics}");
    }
    assert!(dir.path().join("evalout/metrics.json").exists());

    let out = levembed(
        &["diagnose", "--ckpt", "run/model.ckpt", "--data", "data", "--out", "diagout"],
        dir.path(),
    );
    assert_ok(&out);
    for name in ["element_stats.csv", "qq.csv", "pcc.csv", "pcc_hist.csv"] {
        assert!(dir.path().join("diagout").join(name).exists(), "{name}");
    }
    // the correlation grid is dim x dim
    let pcc = std::fs::read_to_string(dir.path().join("diagout/pcc.csv")).unwrap();
    let rows: Vec<&str> = pcc.lines().collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0].split(',').count(), 8);
}

#[test]
fn train_is_deterministic_and_honors_config_file() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    assert_ok(&train_small(dir.path(), &[]));
    let first = std::fs::read(dir.path().join("run/model.ckpt")).unwrap();
    assert_ok(&train_small(dir.path(), &[]));
    assert_eq!(first, std::fs::read(dir.path().join("run/model.ckpt")).unwrap());

    // the same run expressed as a config file reproduces the checkpoint;
    // a flag overrides the file
    std::fs::write(
        dir.path().join("train.toml"),
        "arch = \"cnn-ed-5\"\ndim = 8\nfc-hidden = 16\nepochs = 2\nbatch-size = 32\nseed = 1\n",
    )
    .unwrap();
    let out = levembed(
        &[
            "train", "--data", "data", "--config", "train.toml", "--out", "run2/model.ckpt",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert_eq!(
        first,
        std::fs::read(dir.path().join("run2/model.ckpt")).unwrap()
    );
    let out = levembed(
        &[
            "train", "--data", "data", "--config", "train.toml", "--seed", "2",
            "--out", "run3/model.ckpt",
        ],
        dir.path(),
    );
    assert_ok(&out);
    assert_ne!(
        first,
        std::fs::read(dir.path().join("run3/model.ckpt")).unwrap()
    );
}

#[test]
fn train_warns_on_rechi2_with_l1() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let out = train_small(dir.path(), &["--space", "l1", "--loss", "rechi2"]);
    assert_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "stderr: {stderr}");
}

#[test]
fn train_rejects_zero_dim() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let out = levembed(
        &[
            "train", "--data", "data", "--dim", "0", "--epochs", "1",
            "--out", "run/model.ckpt",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed_dim"));
}

#[test]
fn train_surfaces_pad_arch_mismatch_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = levembed(
        &[
            "gen-data", "--refs", "8", "--ref-len", "20", "--reads-per-ref", "2",
            "--rates", "0.02,0,0.02,0", "--pad", "24", "--seed", "1", "--out", "data",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let out = train_small(dir.path(), &[]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("divisible"), "stderr: {stderr}");
}

#[test]
fn multi_run_training_writes_numbered_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    assert_ok(&train_small(dir.path(), &["--runs", "2"]));
    let run = dir.path().join("run");
    for name in [
        "model_run0.ckpt",
        "model_run1.ckpt",
        "model_run0.epochs.csv",
        "model_run1.epochs.csv",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    let manifest = std::fs::read_to_string(run.join("model.manifest.json")).unwrap();
    assert!(manifest.contains("\"seeds\": [\n    1,\n    2\n  ]"), "{manifest}");
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    assert_ok(&train_small(dir.path(), &[]));
    // regenerate data at a different padded length
    let out = levembed(
        &[
            "gen-data", "--refs", "12", "--ref-len", "64", "--reads-per-ref", "2",
            "--rates", "0.02,0,0.02,0", "--seed", "5", "--out", "data64",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let out = levembed(
        &["eval", "--ckpt", "run/model.ckpt", "--data", "data64", "--out", "evalout"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn montecarlo_sweep_is_deterministic_and_linear_for_signed_permutations() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "montecarlo", "--n", "10", "--dmax", "10", "--trials", "3000",
        "--ortho", "signedperm", "--seed", "2", "--out", "mc",
    ];
    assert_ok(&levembed(&args, dir.path()));
    let first = std::fs::read(dir.path().join("mc/sweep.csv")).unwrap();
    assert_ok(&levembed(&args, dir.path()));
    assert_eq!(first, std::fs::read(dir.path().join("mc/sweep.csv")).unwrap());

    // l1 column grows linearly with slope E|N(0,1)|
    let text = String::from_utf8(first).unwrap();
    let mut points = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "l1" {
            points.push((fields[0].parse::<f64>().unwrap(), fields[2].parse::<f64>().unwrap()));
        }
    }
    assert_eq!(points.len(), 10);
    let slope = (points[9].1 - points[0].1) / (points[9].0 - points[0].0);
    let want = (2.0 / std::f64::consts::PI).sqrt();
    assert!((slope - want).abs() < 0.05, "slope {slope}");
}

#[test]
fn threads_flag_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "gen-data", "--refs", "10", "--ref-len", "32", "--reads-per-ref", "3",
        "--rates", "0.02,0,0.02,0", "--seed", "9", "--out", "a",
    ];
    assert_ok(&levembed(&args, dir.path()));
    let last = args.len() - 1;
    args[last] = "b";
    args.push("--threads");
    args.push("1");
    assert_ok(&levembed(&args, dir.path()));
    assert_eq!(
        std::fs::read(dir.path().join("a/train.csv")).unwrap(),
        std::fs::read(dir.path().join("b/train.csv")).unwrap()
    );
}
