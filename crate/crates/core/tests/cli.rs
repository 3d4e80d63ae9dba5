use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anatomy_net::cli::{self, cmd_eval_cnn, cmd_prepare, RunConfig};
use anatomy_net::data::{FeatureSet, Split};
use anatomy_net::gradsuite::{default_cases, run_suite, CheckCase};
use anatomy_net::trainer::RunHistory;
use anatomy_net::Tensor;
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["anatomy-net"];
    full.extend_from_slice(args);
    cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_digest(dir: &Path) -> String {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const SMALL_MODEL: &str = r#"
[data]
image_size = [32, 32]
min_count = 5

[model]
input_shape = [1, 32, 32]
num_classes = 3
layers = ["conv 4 bn", "pool", "conv 8 bn", "pool", "dense 8 bn dropout=0.5", "softmax 3"]

[train]
epochs = 2
batch_size = 8

[augment]
crop_to = [30, 30]
"#;

/// Synthesize and prepare a 3-class, 8-per-class corpus; returns the prepared manifest.
fn tiny_corpus(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    assert_eq!(
        run(&[
            "synth-data",
            "--classes",
            "3",
            "--per-class",
            "8",
            "--seed",
            "5",
            "--out-dir",
            s(&corpus)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "prepare",
            "--manifest",
            s(&corpus.join("manifest.csv")),
            "--min-count",
            "5",
            "--out-dir",
            s(&corpus)
        ]),
        0
    );
    corpus.join(cli::DATASET_FILE)
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--bogus"]), 1);
    assert_eq!(run(&["train-svm"]), 1, "missing features is a usage error");
}

#[test]
fn synth_rejects_too_many_classes_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    assert_eq!(run(&["synth-data", "--classes", "25", "--out-dir", s(&out)]), 1);
    assert!(!out.exists());
}

#[test]
fn full_synthetic_corpus_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            run(&[
                "synth-data",
                "--classes",
                "24",
                "--per-class",
                "60",
                "--seed",
                "3",
                "--out-dir",
                s(out)
            ]),
            0
        );
    }
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 1440);
    assert_eq!(tree_digest(&a), tree_digest(&b));

    assert_eq!(
        run(&["prepare", "--manifest", s(&a.join("manifest.csv")), "--out-dir", s(&a)]),
        0
    );
    let counts = fs::read_to_string(a.join(cli::CLASS_COUNTS_FILE)).unwrap();
    assert_eq!(counts.lines().count(), 25);
    assert!(counts.lines().skip(1).all(|l| l.ends_with(",60,54,6")), "{counts}");
}

#[test]
fn prepare_is_idempotent_and_reports_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let corpus = manifest.parent().unwrap();
    let before = fs::read(&manifest).unwrap();
    let counts = fs::read(corpus.join(cli::CLASS_COUNTS_FILE)).unwrap();
    assert_eq!(
        run(&[
            "prepare",
            "--manifest",
            s(&manifest),
            "--min-count",
            "5",
            "--out-dir",
            s(corpus)
        ]),
        0
    );
    assert_eq!(fs::read(&manifest).unwrap(), before);
    assert_eq!(fs::read(corpus.join(cli::CLASS_COUNTS_FILE)).unwrap(), counts);

    let out = dir.path().join("empty");
    assert_eq!(
        run(&[
            "prepare",
            "--manifest",
            s(&manifest),
            "--min-count",
            "1000",
            "--out-dir",
            s(&out)
        ]),
        2
    );
    assert!(!out.exists());
    let cfg = RunConfig {
        data: cli::DataConfig {
            min_count: 1000,
            ..Default::default()
        },
        ..Default::default()
    };
    let err = cmd_prepare(&manifest, &out, &cfg).unwrap_err();
    assert!(err.to_string().contains("no classes survive"));

    assert_eq!(
        run(&[
            "prepare",
            "--manifest",
            s(&dir.path().join("absent.csv")),
            "--out-dir",
            s(&out)
        ]),
        2
    );
}

#[test]
fn train_smoke_artifacts_and_consistent_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cfg_path = dir.path().join("small.toml");
    fs::write(&cfg_path, SMALL_MODEL).unwrap();
    let run_dir = dir.path().join("run");
    let code = run(&[
        "train-cnn",
        "--manifest",
        s(&manifest),
        "--config",
        s(&cfg_path),
        "--seed",
        "11",
        "--threads",
        "1",
        "--out-dir",
        s(&run_dir),
    ]);
    assert_eq!(code, 0);
    for f in ["config.toml", "history.csv", "best.ckpt", "last.ckpt", "confusion.csv"] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    let history = RunHistory::read_csv(&run_dir.join("history.csv")).unwrap();
    assert_eq!(history.epochs.len(), 2);
    let best = history.best().unwrap().test_acc;

    let cfg = RunConfig::load(Some(&cfg_path), &[]).unwrap();
    let eval = cmd_eval_cnn(
        &run_dir.join("best.ckpt"),
        &manifest,
        Split::Test,
        &dir.path().join("eval"),
        &cfg,
    )
    .unwrap();
    assert_eq!(eval.accuracy, best);

    // the echoed config reproduces the run
    let again = dir.path().join("again");
    let echo = run_dir.join("config.toml");
    assert_eq!(run(&["train-cnn", "--config", s(&echo), "--out-dir", s(&again)]), 0);
    assert_eq!(
        fs::read(run_dir.join("last.ckpt")).unwrap(),
        fs::read(again.join("last.ckpt")).unwrap()
    );

    let corrupt = dir.path().join("corrupt.ckpt");
    let mut bytes = fs::read(run_dir.join("best.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&corrupt, bytes).unwrap();
    assert_eq!(
        run(&[
            "eval-cnn",
            "--checkpoint",
            s(&corrupt),
            "--manifest",
            s(&manifest),
            "--out-dir",
            s(&dir.path().join("e2"))
        ]),
        2
    );
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let out = dir.path().join("bad");
    let code = run(&[
        "train-cnn",
        "--manifest",
        s(&manifest),
        "--set",
        "train.lr0=-1",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code, 1);
    assert!(!out.exists());
    let code = run(&[
        "train-cnn",
        "--manifest",
        s(&manifest),
        "--set",
        "model.layers=[\"conv 4\"]",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code, 1);
    assert!(!out.exists());
}

fn blob_features(per_class: usize, dim: usize, seed: u64) -> FeatureSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let centers = [[4.0f32, 0.0], [-4.0, 3.0], [0.0, -4.0]];
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let mut row = vec![0.0f32; dim];
            row[0] = c[0] + rng.random_range(-0.5..0.5);
            row[1] = c[1] + rng.random_range(-0.5..0.5);
            data.extend(row);
            labels.push(k);
        }
    }
    FeatureSet::new(Tensor::new([labels.len(), dim], data).unwrap(), labels, "blobs").unwrap()
}

#[test]
fn svm_commands() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.fvs");
    blob_features(10, 16, 1).write(&train).unwrap();
    let out = dir.path().join("svm");
    let code = run(&[
        "train-svm",
        "--features",
        s(&train),
        "--set",
        "data.feature_dim=16",
        "--set",
        "svm.grid=[1.0]",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let table = fs::read_to_string(out.join(cli::CV_TABLE_FILE)).unwrap();
    assert_eq!(table.lines().next(), Some("C,fold,accuracy"));
    assert_eq!(table.lines().count(), 6);

    let model = out.join(cli::SVM_MODEL_FILE);
    let acc = cli::cmd_eval_svm(&model, &train).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!(run(&["eval-svm", "--model", s(&model), "--features", s(&train)]), 0);

    let wrong = dir.path().join("wrong.fvs");
    blob_features(2, 15, 2).write(&wrong).unwrap();
    assert_eq!(run(&["eval-svm", "--model", s(&model), "--features", s(&wrong)]), 2);
    let err = cli::cmd_eval_svm(&model, &wrong).unwrap_err().to_string();
    assert!(err.contains("dimension"), "{err}");
}

#[test]
fn gradcheck_command() {
    assert_eq!(run(&["gradcheck"]), 0);
    let broken = || {
        vec![CheckCase::new("broken dense", 1e-4, || {
            use anatomy_net::nn::{dense_backward, dense_forward, grad_check};
            let inputs = [
                Tensor::<f64>::from_fn([2, 3], |i| i as f64 * 0.3 - 0.4),
                Tensor::<f64>::from_fn([3, 2], |i| 0.2 * i as f64 - 0.5),
                Tensor::<f64>::full([2], 0.1),
            ];
            grad_check(
                |xs| Ok(dense_forward(&xs[0], &xs[1], &xs[2])?.0),
                |xs, gy| {
                    let (_, cache) = dense_forward(&xs[0], &xs[1], &xs[2])?;
                    let g = dense_backward(gy, &cache)?;
                    // deliberately wrong: doubled weight gradient
                    Ok(vec![g.input, g.weight.map(|v| 2.0 * v), g.bias])
                },
                &inputs,
                1e-6,
                1,
            )
        })]
    };
    assert_eq!(cli::run_with_cases(["anatomy-net", "gradcheck"], broken), 3);

    let report = run_suite(&default_cases());
    let text = report.to_string();
    for case in default_cases() {
        assert_eq!(text.matches(&format!(" {} ", case.name)).count(), 1, "{}", case.name);
    }
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_anatomy-net");
    let ok = Command::new(exe).arg("gradcheck").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("reduced model"));
    let bad = Command::new(exe)
        .args(["synth-data", "--classes", "30"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
