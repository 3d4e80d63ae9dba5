//! Dataset ingestion: manifests, label flattening, splitting, images, and feature files.

mod features;
mod image;
mod manifest;
mod synth;

pub use self::image::{decode_image, fit_center, load_image, save_png, DEFAULT_IMAGE_SIZE};
pub use features::{load_feature_set, FeatureSet, DEFAULT_FEATURE_DIM, FEATURE_MAGIC};
pub use manifest::{
    assign_classes, filter_min_count, flatten_labels, prepare, read_raw_manifest, resolve_path, stratified_split,
    train_count, write_raw_manifest, ClassCount, ClassMapping, DatasetManifest, FilterOutcome, LabeledRecord,
    ManifestRecord, PrepareReport, RawRecord, Split, DEFAULT_MIN_COUNT, DEFAULT_TRAIN_FRAC,
};
pub use synth::{
    generate_synthetic_corpus, render_phantom, synthetic_code, validate_corpus_args, SyntheticCorpus,
    MAX_SYNTHETIC_CLASSES, SYNTH_SIZE,
};
