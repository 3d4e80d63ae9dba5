use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::resize_bilinear;
use crate::cli::config::RunConfig;
use crate::data::{
    generate_synthetic_corpus, load_feature_set, prepare, read_raw_manifest, resolve_path, validate_corpus_args,
    DatasetManifest, FeatureSet, RawRecord, Split,
};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, CheckCase};
use crate::model::{load_checkpoint, Model};
use crate::rng::derive_seed;
use crate::svm::{fit_svm, CvResult, MulticlassSvm};
use crate::tensor::Tensor;
use crate::trainer::{
    evaluate, run_to_completion, train, Evaluation, ImageSet, RunHistory, RunOutputs, BEST_CHECKPOINT,
};

pub const CONFIG_ECHO: &str = "config.toml";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CLASS_COUNTS_FILE: &str = "class_counts.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CV_TABLE_FILE: &str = "cv_table.csv";
pub const SVM_MODEL_FILE: &str = "svm.model";
pub const TRAIN_FEATURES_FILE: &str = "train_features.fvs";
pub const TEST_FEATURES_FILE: &str = "test_features.fvs";

const INIT_STREAM: u64 = 0x1417;

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = out.join(CONFIG_ECHO);
    fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `path` relative to `base` when it lies beneath it, otherwise absolute.
fn relative_to(path: &Path, base: &Path) -> Result<String> {
    let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
    let p = abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs);
    Ok(p.to_string_lossy().replace('\\', "/"))
}

pub fn cmd_prepare(manifest_in: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let base = parent_dir(manifest_in);
    let raw = read_raw_manifest(manifest_in)?
        .into_iter()
        .map(|r| {
            Ok(RawRecord::new(
                relative_to(&resolve_path(&base, &r.image_path), out)?,
                r.label_code,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (manifest, report) = prepare(&raw, cfg.data.min_count, cfg.data.train_frac, cfg.seed)?;

    create_out_dir(out)?;
    manifest.write_csv(&out.join(DATASET_FILE))?;
    manifest.write_class_counts(&out.join(CLASS_COUNTS_FILE))?;
    echo_config(cfg, out)?;

    let counts = manifest.class_counts();
    println!(
        "{} classes, {} train / {} test records (from {} input records)",
        manifest.num_classes(),
        counts.iter().map(|c| c.train).sum::<usize>(),
        counts.iter().map(|c| c.test).sum::<usize>(),
        report.input_records
    );
    for c in &counts {
        println!(
            "  class {:>2} {}: {} ({} train, {} test)",
            c.class_id, c.label_code, c.total, c.train, c.test
        );
    }
    for (code, n) in &report.removed {
        println!("  removed {code}: {n} records");
    }
    Ok(())
}

pub fn cmd_synth_data(num_classes: usize, per_class: usize, seed: u64, out: &Path) -> Result<()> {
    validate_corpus_args(num_classes, per_class)?;
    let corpus = generate_synthetic_corpus(num_classes, per_class, seed, out)?;
    println!(
        "wrote {} images in {num_classes} classes; manifest {}",
        corpus.records.len(),
        corpus.manifest_path.display()
    );
    Ok(())
}

fn load_split(manifest: &DatasetManifest, manifest_path: &Path, split: Split, size: [usize; 2]) -> Result<ImageSet> {
    ImageSet::from_manifest(manifest, &parent_dir(manifest_path), split, size)
}

pub fn cmd_train_cnn(manifest_path: &Path, out: &Path, cfg: &RunConfig) -> Result<(RunHistory, Evaluation)> {
    let manifest = DatasetManifest::read_csv(manifest_path)?;
    let spec = cfg.model_spec(manifest.num_classes())?;
    let size = [spec.input_shape[1], spec.input_shape[2]];
    let train_set = load_split(&manifest, manifest_path, Split::Train, size)?;
    let test_set = load_split(&manifest, manifest_path, Split::Test, size)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Data("manifest needs both train and test records".into()));
    }
    let mut model: Model<f32> = Model::build(spec.clone(), derive_seed(cfg.train.seed, &[INIT_STREAM]))?;

    let mut resolved = cfg.clone();
    resolved.model = Some(spec);
    resolved.data.manifest = Some(std::path::absolute(manifest_path).map_err(|e| Error::io(manifest_path, e))?);
    create_out_dir(out)?;
    echo_config(&resolved, out)?;

    let history = train(
        &mut model,
        &train_set,
        &test_set,
        &cfg.train,
        &cfg.augment,
        &RunOutputs::in_dir(out),
        &mut run_to_completion,
    )?;
    let best: Model<f32> = load_checkpoint(&out.join(BEST_CHECKPOINT))?;
    let eval = evaluate(&best, &test_set, cfg.train.eval_batch_size)?;
    eval.write_confusion_csv(&out.join(CONFUSION_FILE))?;
    let best_epoch = history.best().map_or(0, |e| e.epoch);
    println!(
        "trained {} epochs; best test accuracy {:.4} at epoch {best_epoch}",
        history.epochs.len(),
        eval.accuracy
    );
    Ok((history, eval))
}

pub fn cmd_eval_cnn(
    checkpoint: &Path,
    manifest_path: &Path,
    split: Split,
    out: &Path,
    cfg: &RunConfig,
) -> Result<Evaluation> {
    let model: Model<f32> = load_checkpoint(checkpoint)?;
    let manifest = DatasetManifest::read_csv(manifest_path)?;
    let [_, h, w] = model.spec().input_shape;
    let set = load_split(&manifest, manifest_path, split, [h, w])?;
    let eval = evaluate(&model, &set, cfg.train.eval_batch_size)?;
    create_out_dir(out)?;
    eval.write_confusion_csv(&out.join(CONFUSION_FILE))?;
    println!("{split} accuracy {:.4} over {} images", eval.accuracy, eval.total());
    Ok(eval)
}

fn pixel_features(set: &ImageSet, side: usize, source: &str) -> Result<FeatureSet> {
    let mut data = Vec::with_capacity(set.len() * side * side);
    for img in &set.images {
        data.extend_from_slice(resize_bilinear(img, side, side)?.data());
    }
    FeatureSet::new(Tensor::new([set.len(), side * side], data)?, set.labels.clone(), source)
}

pub fn cmd_pixel_features(manifest_path: &Path, side: usize, out: &Path, cfg: &RunConfig) -> Result<()> {
    if side == 0 {
        return Err(Error::Config("pixel feature side must be at least 1".into()));
    }
    let manifest = DatasetManifest::read_csv(manifest_path)?;
    let mut sets = Vec::new();
    for (split, name) in [(Split::Train, TRAIN_FEATURES_FILE), (Split::Test, TEST_FEATURES_FILE)] {
        let images = load_split(&manifest, manifest_path, split, cfg.data.image_size)?;
        sets.push((pixel_features(&images, side, "pixels")?, name));
    }
    create_out_dir(out)?;
    for (fs, name) in sets {
        fs.write(&out.join(name))?;
        println!("wrote {} rows of dimension {} to {name}", fs.len(), fs.dim());
    }
    Ok(())
}

pub fn cmd_train_svm(features_path: &Path, out: &Path, cfg: &RunConfig) -> Result<(MulticlassSvm, Option<CvResult>)> {
    let features = load_feature_set(features_path, Some(cfg.data.feature_dim))?;
    let (model, cv) = fit_svm(&features, &cfg.svm)?;
    create_out_dir(out)?;
    echo_config(cfg, out)?;
    if let Some(cv) = &cv {
        let p = out.join(CV_TABLE_FILE);
        let mut w = csv::Writer::from_path(&p).map_err(|e| Error::Data(e.to_string()))?;
        for row in &cv.table {
            w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        for (c, acc) in &cv.means {
            println!("C = {c:<12e} mean CV accuracy {acc:.4}");
        }
    }
    model.save(&out.join(SVM_MODEL_FILE))?;
    println!(
        "selected C = {:e}; training accuracy {:.4}",
        model.trained_c,
        model.accuracy(&features)?
    );
    Ok((model, cv))
}

pub fn cmd_eval_svm(model_path: &Path, features_path: &Path) -> Result<f64> {
    let model = MulticlassSvm::load(model_path)?;
    let features = load_feature_set(features_path, Some(model.dim()))?;
    let acc = model.accuracy(&features)?;
    println!("accuracy {acc:.4} over {} vectors", features.len());
    Ok(acc)
}

/// Print the report; `Ok(true)` when every check is under its threshold.
pub fn cmd_gradcheck(cases: &[CheckCase]) -> Result<bool> {
    let report = run_suite(cases);
    print!("{report}");
    Ok(report.all_passed())
}
