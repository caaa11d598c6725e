//! Checkpoints: one STNSR1 file per parameter plus `checkpoint.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use star_tensor::{io, ParamStore};

use crate::dataset::{read_json, write_json, Dataset};
use crate::error::{Result, StarError};
use crate::model::{ModelConfig, StarModel};
use crate::rng::fnv1a;
use crate::semantics::SemanticEmbeddingSet;
use crate::skeleton::JointLayout;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub layout: JointLayout,
    pub categories: Vec<String>,
    pub known: Vec<String>,
    pub sem_dim: usize,
    pub params: Vec<ParamEntry>,
}

/// Hash of everything that fixes the parameter set and the data it was
/// fitted to. Epoch counts are excluded so a run can be extended.
pub fn config_hash(
    model: &ModelConfig,
    train: &TrainConfig,
    categories: &[String],
    known: &[String],
    sem_dim: usize,
) -> String {
    let mut train = train.clone();
    train.epochs = 0;
    let doc = serde_json::json!({
        "model": model,
        "train": train,
        "categories": categories,
        "known": known,
        "sem_dim": sem_dim,
    });
    format!("{:016x}", fnv1a(doc.to_string().as_bytes()))
}

fn file_name(name: &str) -> String {
    format!("{name}.stnsr")
}

pub fn save(dir: &Path, meta_base: &CheckpointMeta, store: &ParamStore<f32>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;
    let mut meta = meta_base.clone();
    meta.params.clear();
    for (_, p) in store.iter() {
        let file = file_name(p.name());
        io::write(dir.join(&file), p.value())?;
        meta.params.push(ParamEntry {
            name: p.name().to_string(),
            file,
            shape: p.value().shape().to_vec(),
            trainable: p.trainable(),
        });
    }
    write_json(&dir.join("checkpoint.json"), &meta)
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    read_json(&dir.join("checkpoint.json"))
}

/// Rebuild the model from its recorded configuration and overwrite every
/// parameter with the stored tensors.
pub fn load(dir: &Path) -> Result<(CheckpointMeta, StarModel, ParamStore<f32>)> {
    let meta = read_meta(dir)?;
    let (model, mut store) = StarModel::new::<f32>(
        meta.model,
        &meta.layout,
        meta.categories.len(),
        meta.known.len(),
        meta.sem_dim,
        meta.seed,
    )?;
    if store.len() != meta.params.len() {
        return Err(StarError::Compatibility(format!(
            "checkpoint has {} parameters, configuration builds {}",
            meta.params.len(),
            store.len()
        )));
    }
    for entry in &meta.params {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| StarError::Compatibility(format!("unexpected parameter `{}`", entry.name)))?;
        let value = io::read::<f32>(dir.join(&entry.file))?;
        if value.shape() != store.get(id).value().shape() {
            return Err(StarError::Compatibility(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                entry.name,
                value.shape(),
                store.get(id).value().shape()
            )));
        }
        store.set_value(id, value)?;
        store.set_trainable(id, entry.trainable);
    }
    Ok((meta, model, store))
}

/// Check that a checkpoint can score `ds` with `emb`: same categories, split,
/// joint layout and embedding width as it was trained on.
pub fn check_compatible(meta: &CheckpointMeta, ds: &Dataset, emb: &SemanticEmbeddingSet) -> Result<()> {
    let known = ds.split.to_file().known;
    let problem = if meta.categories != ds.split.categories() {
        Some(format!("categories differ ({} in checkpoint, {} in dataset)", meta.categories.len(), ds.split.len()))
    } else if meta.known != known {
        Some("known/unknown split differs".to_string())
    } else if &meta.layout != ds.layout() {
        Some("joint layout differs".to_string())
    } else if meta.sem_dim != emb.dim() {
        Some(format!("embedding width {} vs {}", meta.sem_dim, emb.dim()))
    } else if emb.parts_count() != meta.model.partition.parts() {
        Some(format!("{} part embeddings for a {}-part model", emb.parts_count(), meta.model.partition.parts()))
    } else {
        None
    };
    match problem {
        Some(p) => Err(StarError::Compatibility(p)),
        None => Ok(()),
    }
}
