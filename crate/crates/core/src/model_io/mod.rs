//! Serialization of models and edge-score tensors, and seeded fixture models.

mod container;
mod random;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use container::{hex_digest, tensor_bytes, tensor_checksum, Container, CONFIG_KEY, MAGIC};
pub use random::random_model;

use crate::attribution::{EdgeScoreMatrix, Method};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transformer::{ModelConfig, ModelWeights};

pub const EDGE_SCORES: &str = "edge_scores";

pub fn model_container(weights: &ModelWeights) -> Result<Container> {
    Ok(Container {
        config: Some(serde_json::to_value(&weights.config)?),
        tensors: weights
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect(),
    })
}

pub fn model_from_container(container: Container) -> Result<ModelWeights> {
    let config: ModelConfig = match container.config {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Inconsistent(format!("{CONFIG_KEY}: {e}")))?,
        None => return Err(Error::MissingTensor(CONFIG_KEY.into())),
    };
    ModelWeights::from_named(config, container.tensors)
}

pub fn save_model(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    model_container(weights)?.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    model_from_container(Container::load(path)?)
}

/// Metadata stored under `__config__` of a score container and mirrored in
/// the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub sample_ids: Vec<String>,
    pub method: Method,
    pub alpha: f64,
    pub t_cut: usize,
    pub n_layers: usize,
    pub losses: Vec<f64>,
}

pub fn scores_container(matrices: &[EdgeScoreMatrix], meta: &ScoreMeta) -> Result<Container> {
    let n_o = 2 * meta.n_layers + 1;
    let n_i = n_o;
    let mut data = Vec::with_capacity(matrices.len() * n_o * n_i);
    for m in matrices {
        if m.n_sources != n_o || m.n_destinations != n_i {
            return Err(Error::Inconsistent(format!(
                "sample {} is {}x{}, expected {n_o}x{n_i}",
                m.sample_id, m.n_sources, m.n_destinations
            )));
        }
        data.extend_from_slice(&m.scores);
    }
    let tensor = Tensor::from_vec(vec![matrices.len(), n_o, n_i], data)?;
    Ok(Container {
        config: Some(serde_json::to_value(meta)?),
        tensors: [(EDGE_SCORES.to_string(), tensor)].into_iter().collect(),
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `path` and its `.json` sidecar.
pub fn save_scores(matrices: &[EdgeScoreMatrix], meta: &ScoreMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    scores_container(matrices, meta)?.save(path)?;
    let sidecar = sidecar_path(path);
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<(Vec<EdgeScoreMatrix>, ScoreMeta)> {
    let container = Container::load(path)?;
    let meta: ScoreMeta = match container.config {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Inconsistent(format!("{CONFIG_KEY}: {e}")))?,
        None => return Err(Error::MissingTensor(CONFIG_KEY.into())),
    };
    let t = container
        .tensors
        .get(EDGE_SCORES)
        .ok_or_else(|| Error::MissingTensor(EDGE_SCORES.into()))?;
    let n_o = 2 * meta.n_layers + 1;
    let n = meta.sample_ids.len();
    if t.shape() != [n, n_o, n_o] || meta.losses.len() != n {
        return Err(Error::Inconsistent(format!(
            "{EDGE_SCORES} shape {:?} vs {n} samples of {n_o}x{n_o}",
            t.shape()
        )));
    }
    let per = n_o * n_o;
    let matrices = (0..n)
        .map(|k| EdgeScoreMatrix {
            sample_id: meta.sample_ids[k].clone(),
            method: meta.method,
            n_sources: n_o,
            n_destinations: n_o,
            scores: t.data()[k * per..(k + 1) * per].to_vec(),
            t_cut: meta.t_cut,
            loss: meta.losses[k],
        })
        .collect();
    Ok((matrices, meta))
}
