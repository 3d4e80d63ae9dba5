use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::network::{bn_site, param_shapes, Model};
use crate::model::spec::ModelSpec;
use crate::nn::RunningStats;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_KIND: &str = "model";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    dtype: String,
    rng_seed: u64,
    running_updates: BTreeMap<String, u64>,
    model: ModelSpec,
}

fn mean_key(site: &str) -> String {
    format!("{site}.running_mean")
}
fn var_key(site: &str) -> String {
    format!("{site}.running_var")
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        dtype: T::DTYPE.to_string(),
        rng_seed: model.rng_seed(),
        running_updates: model
            .running_stats()
            .iter()
            .map(|(k, s)| (k.clone(), s.updates))
            .collect(),
        model: model.spec().clone(),
    };
    let meta = toml::to_string(&meta).map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
    let mut c = Container::new(CHECKPOINT_KIND, meta);
    for (name, t) in model.params() {
        c.push(name.clone(), t.clone());
    }
    for (site, stats) in model.running_stats() {
        c.push(mean_key(site), stats.mean.clone());
        c.push(var_key(site), stats.var.clone());
    }
    c.write(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    load(path, None)
}

/// Load a checkpoint that must fit `spec`'s parameter shapes.
pub fn load_checkpoint_for_spec<T: Scalar>(path: &Path, spec: &ModelSpec) -> Result<Model<T>> {
    load(path, Some(spec))
}

fn load<T: Scalar>(path: &Path, expected: Option<&ModelSpec>) -> Result<Model<T>> {
    let container = Container::read(path)?;
    let format = |detail: String| Error::Format {
        path: path.to_path_buf(),
        what: "model checkpoint",
        detail,
    };
    if container.kind != CHECKPOINT_KIND {
        return Err(format(format!("container holds a {:?}, not a model", container.kind)));
    }
    let meta: CheckpointMeta = toml::from_str(&container.meta).map_err(|e| format(format!("metadata: {e}")))?;
    if meta.dtype != T::DTYPE.to_string() {
        return Err(format(format!("stored as {}, requested {}", meta.dtype, T::DTYPE)));
    }
    let trace = meta
        .model
        .validate()
        .map_err(|e| Error::Inconsistent(format!("stored spec does not validate: {e}")))?;
    let mut shapes = param_shapes(&meta.model, &trace);
    if let Some(spec) = expected {
        let want = param_shapes(spec, &spec.validate()?);
        for (name, shape) in &want {
            match shapes.get(name) {
                Some(s) if s == shape => {}
                Some(s) => {
                    return Err(Error::Inconsistent(format!(
                        "{name}: checkpoint has {s:?}, spec expects {shape:?}"
                    )))
                }
                None => {
                    return Err(Error::Inconsistent(format!(
                        "{name}: expected by spec but absent from checkpoint"
                    )))
                }
            }
        }
        if let Some(extra) = shapes.keys().find(|k| !want.contains_key(*k)) {
            return Err(Error::Inconsistent(format!(
                "{extra}: present in checkpoint but not in spec"
            )));
        }
        if spec != &meta.model {
            return Err(Error::Inconsistent(
                "checkpoint spec differs from the expected spec".into(),
            ));
        }
    }

    let mut tensors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    for (name, t) in container.tensors {
        let dtype = t.dtype();
        let typed = t
            .into_typed::<T>()
            .ok_or_else(|| format(format!("tensor {name} stored as {dtype}, expected {}", T::DTYPE)))?;
        if tensors.insert(name.clone(), typed).is_some() {
            return Err(format(format!("duplicate tensor {name}")));
        }
    }

    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Inconsistent(format!("{name}: missing from checkpoint")))?;
        if t.shape() != shape {
            return Err(Error::Inconsistent(format!(
                "{name}: stored shape {:?}, spec implies {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };

    let mut params = BTreeMap::new();
    for (name, shape) in std::mem::take(&mut shapes) {
        let t = take(&name, &shape)?;
        params.insert(name, t);
    }
    let mut running = BTreeMap::new();
    for (row, layer) in meta.model.layers.iter().enumerate() {
        if !layer.has_batch_norm() {
            continue;
        }
        let site = bn_site(row);
        let c = params[&crate::model::gamma_key(row)].len();
        let mean = take(&mean_key(&site), &[c])?;
        let var = take(&var_key(&site), &[c])?;
        if var.data().iter().any(|v| v.f64().is_nan() || v.f64() < 0.0) {
            return Err(Error::Inconsistent(format!("{site}: negative running variance")));
        }
        let updates = *meta
            .running_updates
            .get(&site)
            .ok_or_else(|| Error::Inconsistent(format!("{site}: missing update count")))?;
        running.insert(site, RunningStats { mean, var, updates });
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Inconsistent(format!("{extra}: unexpected tensor in checkpoint")));
    }
    Model::from_parts(meta.model, params, running, meta.rng_seed)
}
