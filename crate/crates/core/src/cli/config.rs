//! Run configuration: one TOML file with `[data]`, `[model]`, `[train]`,
//! `[augment]` and `[svm]` sections, plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{DEFAULT_FEATURE_DIM, DEFAULT_IMAGE_SIZE, DEFAULT_MIN_COUNT, DEFAULT_TRAIN_FRAC};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::svm::SvmConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub min_count: usize,
    pub train_frac: f64,
    pub image_size: [usize; 2],
    pub features: Option<PathBuf>,
    pub feature_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            min_count: DEFAULT_MIN_COUNT,
            train_frac: DEFAULT_TRAIN_FRAC,
            image_size: DEFAULT_IMAGE_SIZE,
            features: None,
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for data preparation and corpus generation.
    pub seed: u64,
    pub data: DataConfig,
    /// Absent: the default architecture sized to the dataset's class count.
    pub model: Option<ModelSpec>,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub svm: SvmConfig,
}

impl RunConfig {
    /// Parse `text` after applying `overrides` (`dotted.key=value`, value read as TOML, else as a string).
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.svm.solver.seed = seed;
    }

    /// Checks shared by every command; model-specific checks happen once the class count is known.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.train_frac > 0.0 && d.train_frac < 1.0) {
            return Err(Error::Config(format!("data.train_frac {} outside (0,1)", d.train_frac)));
        }
        if d.min_count == 0 {
            return Err(Error::Config("data.min_count must be at least 1".into()));
        }
        if d.image_size.contains(&0) {
            return Err(Error::Config("data.image_size must be non-empty".into()));
        }
        if d.feature_dim == 0 {
            return Err(Error::Config("data.feature_dim must be at least 1".into()));
        }
        self.train.validate()?;
        self.augment.validate(d.image_size)?;
        self.svm.validate()?;
        if let Some(spec) = &self.model {
            spec.validate()?;
            let [_, h, w] = spec.input_shape;
            if [h, w] != d.image_size {
                return Err(Error::Config(format!(
                    "model input {h}x{w} differs from data.image_size {:?}",
                    d.image_size
                )));
            }
        }
        Ok(())
    }

    /// The configured architecture, or the default one for `num_classes` at the configured size.
    pub fn model_spec(&self, num_classes: usize) -> Result<ModelSpec> {
        let spec = match &self.model {
            Some(spec) => spec.clone(),
            None => {
                let mut spec = ModelSpec::annex(num_classes);
                spec.input_shape = [1, self.data.image_size[0], self.data.image_size[1]];
                spec
            }
        };
        spec.validate()?;
        if spec.num_classes != num_classes {
            return Err(Error::Config(format!(
                "model predicts {} classes but the dataset has {num_classes}",
                spec.num_classes
            )));
        }
        Ok(spec)
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
