//! Manifest records and the flatten -> filter -> split pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

pub const DEFAULT_MIN_COUNT: usize = 50;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.9;

/// One input row: an image and its hierarchical label code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RawRecord {
    pub image_path: String,
    pub label_code: String,
}

impl RawRecord {
    pub fn new(image_path: impl Into<String>, label_code: impl Into<String>) -> Self {
        RawRecord {
            image_path: image_path.into(),
            label_code: label_code.into(),
        }
    }
}

/// Flat classes in sorted-unique order of the full label codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMapping {
    classes: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl ClassMapping {
    pub fn from_codes<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        let classes: Vec<String> = codes
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        let index = classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        ClassMapping { classes, index }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn id_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRecord {
    pub image_path: String,
    pub label_code: String,
    pub class_id: usize,
}

/// Each distinct complete code becomes one class; the hierarchy is discarded.
pub fn flatten_labels(records: &[RawRecord]) -> ClassMapping {
    ClassMapping::from_codes(records.iter().map(|r| r.label_code.as_str()))
}

pub fn assign_classes(records: &[RawRecord], mapping: &ClassMapping) -> Result<Vec<LabeledRecord>> {
    records
        .iter()
        .map(|r| {
            let class_id = mapping
                .id_of(&r.label_code)
                .ok_or_else(|| Error::Data(format!("label code {:?} is not in the class mapping", r.label_code)))?;
            Ok(LabeledRecord {
                image_path: r.image_path.clone(),
                label_code: r.label_code.clone(),
                class_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub records: Vec<LabeledRecord>,
    pub mapping: ClassMapping,
    /// Removed classes with their record counts.
    pub removed: Vec<(String, usize)>,
}

/// Drop every class with fewer than `min_count` records and recompact ids to `[0, K)`.
pub fn filter_min_count(
    records: Vec<LabeledRecord>,
    mapping: &ClassMapping,
    min_count: usize,
) -> Result<FilterOutcome> {
    let mut counts = vec![0usize; mapping.len()];
    for r in &records {
        counts[r.class_id] += 1;
    }
    let kept = mapping
        .classes()
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n >= min_count)
        .map(|(c, _)| c.as_str());
    let new_mapping = ClassMapping::from_codes(kept);
    if new_mapping.is_empty() {
        return Err(Error::Data(format!(
            "no classes survive the minimum count of {min_count}"
        )));
    }
    let removed = mapping
        .classes()
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n < min_count && n > 0)
        .map(|(c, &n)| (c.clone(), n))
        .collect();
    let records = records
        .into_iter()
        .filter_map(|r| {
            new_mapping
                .id_of(&r.label_code)
                .map(|class_id| LabeledRecord { class_id, ..r })
        })
        .collect();
    Ok(FilterOutcome {
        records,
        mapping: new_mapping,
        removed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(rename = "path")]
    pub image_path: String,
    pub label_code: String,
    pub class_id: usize,
    pub split: Split,
}

/// Filtered, flattened, and split dataset description.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub classes: Vec<String>,
}

/// Per-class train count: `round(frac * n)`, kept within `[1, n - 1]`.
pub fn train_count(n: usize, train_frac: f64) -> usize {
    ((train_frac * n as f64).round() as usize).clamp(1, n - 1)
}

/// Per-class shuffle (seeded, independent of input order) and split.
pub fn stratified_split(
    records: &[LabeledRecord],
    mapping: &ClassMapping,
    train_frac: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} outside (0,1)")));
    }
    let mut by_class: Vec<Vec<&LabeledRecord>> = vec![Vec::new(); mapping.len()];
    for r in records {
        by_class
            .get_mut(r.class_id)
            .ok_or_else(|| Error::Data(format!("class id {} outside the mapping", r.class_id)))?
            .push(r);
    }
    let mut out = Vec::with_capacity(records.len());
    for (class_id, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {:?} has {} record(s); stratified splitting needs at least 2",
                mapping.classes()[class_id],
                members.len()
            )));
        }
        members.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        let mut rng = rng_from(derive_seed(seed, &[class_id as u64]));
        members.shuffle(&mut rng);
        let n_train = train_count(members.len(), train_frac);
        for (i, r) in members.into_iter().enumerate() {
            out.push(ManifestRecord {
                image_path: r.image_path.clone(),
                label_code: r.label_code.clone(),
                class_id,
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    out.sort_by(|a, b| (a.class_id, &a.image_path, a.split).cmp(&(b.class_id, &b.image_path, b.split)));
    Ok(DatasetManifest {
        records: out,
        classes: mapping.classes().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareReport {
    pub input_records: usize,
    pub removed: Vec<(String, usize)>,
}

/// flatten -> filter -> split.
pub fn prepare(
    raw: &[RawRecord],
    min_count: usize,
    train_frac: f64,
    seed: u64,
) -> Result<(DatasetManifest, PrepareReport)> {
    if let Some(r) = raw.iter().find(|r| r.label_code.trim().is_empty()) {
        return Err(Error::Data(format!(
            "record {:?} has an empty label code",
            r.image_path
        )));
    }
    let mapping = flatten_labels(raw);
    let labeled = assign_classes(raw, &mapping)?;
    let filtered = filter_min_count(labeled, &mapping, min_count)?;
    let manifest = stratified_split(&filtered.records, &filtered.mapping, train_frac, seed)?;
    Ok((
        manifest,
        PrepareReport {
            input_records: raw.len(),
            removed: filtered.removed,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassCount {
    pub class_id: usize,
    pub label_code: String,
    pub total: usize,
    pub train: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn class_counts(&self) -> Vec<ClassCount> {
        let mut counts: Vec<ClassCount> = self
            .classes
            .iter()
            .enumerate()
            .map(|(class_id, code)| ClassCount {
                class_id,
                label_code: code.clone(),
                total: 0,
                train: 0,
                test: 0,
            })
            .collect();
        for r in &self.records {
            let c = &mut counts[r.class_id];
            c.total += 1;
            match r.split {
                Split::Train => c.train += 1,
                Split::Test => c.test += 1,
            }
        }
        counts
    }

    pub fn raw_records(&self) -> Vec<RawRecord> {
        self.records
            .iter()
            .map(|r| RawRecord::new(r.image_path.clone(), r.label_code.clone()))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_class_counts(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for c in self.class_counts() {
            w.serialize(c).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a prepared manifest (`path,label_code,class_id,split`).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let r: ManifestRecord = row.map_err(|e| csv_err(path, e))?;
            records.push(r);
        }
        let mut classes: BTreeMap<usize, String> = BTreeMap::new();
        for r in &records {
            match classes.get(&r.class_id) {
                Some(code) if code != &r.label_code => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        what: "manifest",
                        detail: format!("class {} maps to both {code:?} and {:?}", r.class_id, r.label_code),
                    })
                }
                _ => {
                    classes.insert(r.class_id, r.label_code.clone());
                }
            }
        }
        let k = classes.len();
        if classes.keys().copied().ne(0..k) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                what: "manifest",
                detail: "class ids are not contiguous from 0".into(),
            });
        }
        Ok(DatasetManifest {
            records,
            classes: classes.into_values().collect(),
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!()
    }
    Error::Format {
        path: path.to_path_buf(),
        what: "CSV",
        detail: e.to_string(),
    }
}

#[derive(Deserialize)]
struct RawRow {
    path: String,
    label_code: String,
}

/// Read `path,label_code` rows; extra columns (such as a prepared manifest's) are ignored.
pub fn read_raw_manifest(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: RawRow = row.map_err(|e| csv_err(path, e))?;
        out.push(RawRecord::new(r.path, r.label_code));
    }
    Ok(out)
}

pub fn write_raw_manifest(records: &[RawRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["path", "label_code"]).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([&r.image_path, &r.label_code])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolve a manifest path entry against the manifest's directory.
pub fn resolve_path(manifest_dir: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}
