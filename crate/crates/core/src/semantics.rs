//! Category-name and part side-information embeddings, the semantic-part
//! prompt, and the two projectors into the shared latent space.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use star_tensor::{io, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::dataset::{read_json, Dataset};
use crate::error::{Result, StarError};
use crate::nn::{gaussian, Mlp};
use crate::rng::{fnv1a, stream, Stream};
use crate::skeleton::PartitionStrategy;

/// One category's per-part motion descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideInfoRecord {
    pub name: String,
    pub parts: BTreeMap<String, String>,
}

/// Read a side-information file and check it against the active strategy:
/// unique names, and exactly one nonempty description per part.
pub fn load_side_info(path: &Path, strategy: &PartitionStrategy) -> Result<Vec<SideInfoRecord>> {
    let records: Vec<SideInfoRecord> = read_json(path)?;
    validate_side_info(&records, strategy)?;
    Ok(records)
}

pub fn validate_side_info(records: &[SideInfoRecord], strategy: &PartitionStrategy) -> Result<()> {
    let mut names = HashSet::new();
    for r in records {
        if !names.insert(r.name.as_str()) {
            return Err(StarError::Validation(format!("duplicate category `{}` in side information", r.name)));
        }
        for part in &strategy.names {
            match r.parts.get(part) {
                None => {
                    return Err(StarError::Validation(format!(
                        "category `{}` has no description for part `{part}`",
                        r.name
                    )))
                }
                Some(d) if d.trim().is_empty() => {
                    return Err(StarError::Validation(format!(
                        "category `{}` has an empty description for part `{part}`",
                        r.name
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = r.parts.keys().find(|k| !strategy.names.contains(k)) {
            return Err(StarError::Validation(format!(
                "category `{}` describes `{extra}`, which is not a part of the {} strategy",
                r.name,
                strategy.kind.name()
            )));
        }
    }
    Ok(())
}

/// Deterministic text embedder: a splitmix64 stream seeded by the FNV-1a
/// hash of the UTF-8 text, mapped to `[-1, 1)` and L2-normalised.
pub fn pseudo_embed(text: &str, dim: usize) -> Vec<f32> {
    let mut rng = stream(fnv1a(text.as_bytes()));
    let raw: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| (v / norm) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    File,
    Pseudo,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EmbeddingProvider {
    /// Stored STNSR1 matrices referenced by the dataset manifest.
    File,
    /// [`pseudo_embed`] over category names and side-info descriptions.
    Pseudo { dim: usize },
}

/// Embed `texts` row by row.
pub fn embed(provider: EmbeddingProvider, texts: &[String]) -> Result<Tensor<f32>> {
    match provider {
        EmbeddingProvider::Pseudo { dim } => {
            if dim == 0 || texts.is_empty() {
                return Err(StarError::Config("pseudo embedding needs dim > 0 and at least one text".into()));
            }
            let data = texts.iter().flat_map(|t| pseudo_embed(t, dim)).collect();
            Ok(Tensor::new(&[texts.len(), dim], data)?)
        }
        EmbeddingProvider::File => {
            Err(StarError::Config("file-backed embeddings are read with `read_embedding_file`".into()))
        }
    }
}

/// Read a stored `rows × d` matrix, requiring one row per category.
pub fn read_embedding_file(path: &Path, rows: usize) -> Result<Tensor<f32>> {
    let t = io::read::<f32>(path)?;
    if t.ndim() != 2 || t.shape()[0] != rows {
        return Err(StarError::Data(format!(
            "{}: expected {rows} embedding rows, found shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    t.check_finite("embedding file")?;
    Ok(t)
}

/// `f_cn` (`|A| × d`) and `f_si` (`K × |A| × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbeddingSet {
    pub names: Tensor<f32>,
    pub parts: Tensor<f32>,
    pub provenance: Provenance,
}

impl SemanticEmbeddingSet {
    pub fn new(names: Tensor<f32>, parts: Tensor<f32>, provenance: Provenance) -> Result<Self> {
        if names.ndim() != 2 || parts.ndim() != 3 || parts.shape()[1..] != *names.shape() {
            return Err(StarError::Data(format!(
                "embedding shapes {:?} and {:?} disagree",
                names.shape(),
                parts.shape()
            )));
        }
        names.check_finite("names")?;
        parts.check_finite("parts")?;
        let set = Self { names, parts, provenance };
        if provenance != Provenance::File {
            let d = set.dim();
            let bad = set
                .names
                .data()
                .chunks(d)
                .chain(set.parts.data().chunks(d))
                .any(|row| (row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs() > 1e-6);
            if bad {
                return Err(StarError::Data("generated embeddings must be unit-norm".into()));
            }
        }
        Ok(set)
    }

    pub fn categories(&self) -> usize {
        self.names.shape()[0]
    }

    pub fn parts_count(&self) -> usize {
        self.parts.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.names.shape()[1]
    }

    /// Load the embeddings for `strategy` from a dataset.
    pub fn for_dataset(
        ds: &Dataset,
        strategy: &PartitionStrategy,
        provider: EmbeddingProvider,
        side_info: Option<&Path>,
    ) -> Result<Self> {
        let a = ds.split.len();
        match provider {
            EmbeddingProvider::File => {
                let files = ds
                    .manifest
                    .semantics
                    .as_ref()
                    .ok_or_else(|| StarError::Data("dataset manifest lists no semantic embedding files".into()))?;
                let names = read_embedding_file(&ds.dir.join(&files.names), a)?;
                let part_files = files.parts.get(strategy.kind.name()).ok_or_else(|| {
                    StarError::Data(format!("no part embeddings for the {} strategy", strategy.kind.name()))
                })?;
                if part_files.len() != strategy.len() {
                    return Err(StarError::Data(format!(
                        "{} part embedding files for {} parts",
                        part_files.len(),
                        strategy.len()
                    )));
                }
                let mut data = Vec::new();
                for f in part_files {
                    let t = read_embedding_file(&ds.dir.join(f), a)?;
                    if t.shape() != names.shape() {
                        return Err(StarError::Data(format!("{f}: shape {:?} differs from names", t.shape())));
                    }
                    data.extend_from_slice(t.data());
                }
                let parts = Tensor::new(&[strategy.len(), a, names.shape()[1]], data)?;
                let provenance = if files.synthetic { Provenance::Synthetic } else { Provenance::File };
                Self::new(names, parts, provenance)
            }
            EmbeddingProvider::Pseudo { dim } => {
                let path = match side_info {
                    Some(p) => p.to_path_buf(),
                    None => {
                        let rel = ds
                            .manifest
                            .semantics
                            .as_ref()
                            .and_then(|s| s.side_info.get(strategy.kind.name()))
                            .ok_or_else(|| StarError::Config("pseudo embeddings need a side-info file".into()))?;
                        ds.dir.join(rel)
                    }
                };
                let records = load_side_info(&path, strategy)?;
                Self::pseudo(ds.split.categories(), &records, strategy, dim)
            }
        }
    }

    /// Pseudo-embed category names and their per-part descriptions.
    pub fn pseudo(
        categories: &[String],
        records: &[SideInfoRecord],
        strategy: &PartitionStrategy,
        dim: usize,
    ) -> Result<Self> {
        validate_side_info(records, strategy)?;
        let provider = EmbeddingProvider::Pseudo { dim };
        let names = embed(provider, categories)?;
        let mut data = Vec::with_capacity(strategy.len() * categories.len() * dim);
        for part in &strategy.names {
            let texts: Vec<String> = categories
                .iter()
                .map(|c| {
                    records
                        .iter()
                        .find(|r| r.name == *c)
                        .map(|r| r.parts[part].clone())
                        .ok_or_else(|| StarError::Validation(format!("no side information for category `{c}`")))
                })
                .collect::<Result<_>>()?;
            data.extend_from_slice(embed(provider, &texts)?.data());
        }
        let parts = Tensor::new(&[strategy.len(), categories.len(), dim], data)?;
        Self::new(names, parts, Provenance::Pseudo)
    }
}

/// `f̂_si = f_si + P_sp`, elementwise over `K × |A| × d`.
pub fn augment_side_info<T: Scalar>(g: &mut Graph<T>, side: Var, prompt: Var) -> Result<Var> {
    if g.shape(side) != g.shape(prompt) {
        return Err(StarError::Tensor(star_tensor::TensorError::Shape {
            op: "augment_side_info",
            lhs: g.shape(side).to_vec(),
            rhs: g.shape(prompt).to_vec(),
        }));
    }
    Ok(g.add(side, prompt)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub parts: usize,
    pub categories: usize,
    pub sem_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub prompt: bool,
    pub shared_side_projector: bool,
}

/// Semantic-part prompt plus the side-information and name projectors.
#[derive(Debug, Clone)]
pub struct SemanticStream {
    pub config: SemanticConfig,
    pub prompt: ParamId,
    pub side: Vec<Mlp>,
    pub names: Mlp,
}

impl SemanticStream {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Stream, config: SemanticConfig) -> Result<Self> {
        let SemanticConfig { parts, categories, sem_dim, hidden, latent, .. } = config;
        let prompt = store.add("semantic.prompt", gaussian(rng, &[parts, categories, sem_dim], 0.02))?;
        if !config.prompt {
            store.set_value(prompt, Tensor::zeros(&[parts, categories, sem_dim]))?;
            store.set_trainable(prompt, false);
        }
        let side = if config.shared_side_projector {
            vec![Mlp::new(store, rng, "semantic.side", (sem_dim, hidden, latent))?]
        } else {
            (0..parts)
                .map(|e| Mlp::new(store, rng, &format!("semantic.side{e}"), (sem_dim, hidden, latent)))
                .collect::<Result<_>>()?
        };
        let names = Mlp::new(store, rng, "semantic.name", (sem_dim, hidden, latent))?;
        Ok(Self { config, prompt, side, names })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.prompt];
        for m in &self.side {
            out.extend(m.params());
        }
        out.extend(self.names.params());
        out
    }

    /// `(F_si: K × |A| × d_lat, F_cn: |A| × d_lat)`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        side: Var,
        names: Var,
    ) -> Result<(Var, Var)> {
        let (k, a) = (self.config.parts, self.config.categories);
        let expect = [k, a, self.config.sem_dim];
        if g.shape(side) != expect {
            return Err(StarError::Tensor(star_tensor::TensorError::Shape {
                op: "project_semantic",
                lhs: g.shape(side).to_vec(),
                rhs: expect.to_vec(),
            }));
        }
        let prompt = g.param(store, self.prompt);
        let augmented = augment_side_info(g, side, prompt)?;
        let f_si = if self.side.len() == 1 {
            self.side[0].forward(g, store, augmented)?
        } else {
            let mut flat = Vec::with_capacity(k);
            for (e, mlp) in self.side.iter().enumerate() {
                let part = g.gather_rows(augmented, &[e])?;
                let part = g.reshape(part, &[a, self.config.sem_dim])?;
                let out = mlp.forward(g, store, part)?;
                flat.push(g.reshape(out, &[1, a * self.config.latent])?);
            }
            let joined = g.concat_lastdim(&flat)?;
            g.reshape(joined, &[k, a, self.config.latent])?
        };
        let f_cn = self.names.forward(g, store, names)?;
        Ok((f_si, f_cn))
    }
}
