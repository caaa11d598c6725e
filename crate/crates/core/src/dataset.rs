//! Dataset directories: `manifest.json`, `samples/<id>.stnsr` and optional
//! semantic embedding and feature files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use star_tensor::io;

use crate::error::{Result, StarError};
use crate::skeleton::{JointLayout, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// Known / unknown category names, as stored in split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub known: Vec<String>,
    pub unknown: Vec<String>,
}

impl SplitFile {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Category table partitioned into known (seen) and unknown (unseen) sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySplit {
    categories: Vec<String>,
    known: Vec<usize>,
    unknown: Vec<usize>,
    is_known: Vec<bool>,
}

impl CategorySplit {
    pub fn new(categories: &[String], split: &SplitFile) -> Result<Self> {
        let index: HashMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        if index.len() != categories.len() {
            return Err(StarError::Validation("duplicate category name in table".into()));
        }
        let resolve = |names: &[String]| -> Result<Vec<usize>> {
            let mut out: Vec<usize> = names
                .iter()
                .map(|n| {
                    index
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| StarError::Validation(format!("split names unknown category `{n}`")))
                })
                .collect::<Result<_>>()?;
            out.sort_unstable();
            Ok(out)
        };
        let known = resolve(&split.known)?;
        let unknown = resolve(&split.unknown)?;
        let mut is_known = vec![false; categories.len()];
        let mut seen = vec![false; categories.len()];
        for &k in &known {
            is_known[k] = true;
            seen[k] = true;
        }
        for &u in &unknown {
            if seen[u] {
                return Err(StarError::Validation(format!("category `{}` is both known and unknown", categories[u])));
            }
            seen[u] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(StarError::Validation(format!(
                "category `{}` is neither known nor unknown",
                categories[missing]
            )));
        }
        if known.is_empty() {
            return Err(StarError::Validation("known set empty".into()));
        }
        if unknown.is_empty() {
            return Err(StarError::Validation("unknown set empty".into()));
        }
        Ok(Self { categories: categories.to_vec(), known, unknown, is_known })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn known(&self) -> &[usize] {
        &self.known
    }

    pub fn unknown(&self) -> &[usize] {
        &self.unknown
    }

    pub fn is_known(&self, category: usize) -> bool {
        self.is_known[category]
    }

    /// Position of `category` inside the known list.
    pub fn known_position(&self, category: usize) -> Option<usize> {
        self.known.binary_search(&category).ok()
    }

    pub fn to_file(&self) -> SplitFile {
        let names = |idx: &[usize]| idx.iter().map(|&i| self.categories[i].clone()).collect();
        SplitFile { known: names(&self.known), unknown: names(&self.unknown) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub label: String,
    pub path: String,
    pub role: Role,
    /// Precomputed part feature files keyed by partition strategy name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, Vec<String>>,
}

/// Embedding file references, relative to the dataset directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticFiles {
    /// `|A| × d_sem` category-name embeddings.
    pub names: String,
    /// Per strategy name, one `|A| × d_sem` file per part.
    pub parts: BTreeMap<String, Vec<String>>,
    /// Per strategy name, the side-information description file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub side_info: BTreeMap<String, String>,
    /// Written by the synthetic generator; rows are unit-norm.
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub layout: JointLayout,
    pub categories: Vec<String>,
    pub split: SplitFile,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<SemanticFiles>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }

    /// Structural checks that do not touch sample files.
    pub fn validate(&self) -> Result<CategorySplit> {
        self.layout.validate()?;
        let split = CategorySplit::new(&self.categories, &self.split)?;
        check_samples(&self.samples, &split)?;
        Ok(split)
    }
}

fn check_samples(samples: &[SampleEntry], split: &CategorySplit) -> Result<()> {
    let mut ids = std::collections::HashSet::new();
    for s in samples {
        if !ids.insert(s.id.as_str()) {
            return Err(StarError::Validation(format!("duplicate sample id `{}`", s.id)));
        }
        let label = split
            .categories()
            .iter()
            .position(|c| *c == s.label)
            .ok_or_else(|| StarError::Validation(format!("sample `{}` has unlisted label `{}`", s.id, s.label)))?;
        if s.role == Role::Train && !split.is_known(label) {
            return Err(StarError::Validation(format!(
                "sample `{}` of unknown category `{}` has the training role",
                s.id, s.label
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub role: Role,
    pub seq: SkeletonSequence,
    pub features: BTreeMap<String, Vec<String>>,
}

/// A validated dataset with every sample tensor loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub split: CategorySplit,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let split = manifest.validate()?;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for entry in &manifest.samples {
            let label = split.categories().iter().position(|c| *c == entry.label).expect("validated");
            let data = io::read::<f32>(dir.join(&entry.path))?;
            let seq = SkeletonSequence::new(data, label)
                .map_err(|e| StarError::Data(format!("sample `{}`: {e}", entry.id)))?;
            if seq.joints() != manifest.layout.len() {
                return Err(StarError::Data(format!(
                    "sample `{}` has {} joints, layout has {}",
                    entry.id,
                    seq.joints(),
                    manifest.layout.len()
                )));
            }
            samples.push(Sample { id: entry.id.clone(), role: entry.role, seq, features: entry.features.clone() });
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, split, samples })
    }

    /// Replace the known/unknown split, re-running the training-role check.
    pub fn with_split(mut self, split: &SplitFile) -> Result<Self> {
        let new = CategorySplit::new(&self.manifest.categories, split)?;
        check_samples(&self.manifest.samples, &new)?;
        self.manifest.split = split.clone();
        self.split = new;
        Ok(self)
    }

    pub fn layout(&self) -> &JointLayout {
        &self.manifest.layout
    }

    /// Training samples; all carry known labels by validation.
    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(|s| s.role == Role::Train)
    }

    pub fn test_seen_indices(&self) -> Vec<usize> {
        self.indices(|s| s.role == Role::Test && self.split.is_known(s.seq.label))
    }

    pub fn test_unseen_indices(&self) -> Vec<usize> {
        self.indices(|s| s.role == Role::Test && !self.split.is_known(s.seq.label))
    }

    fn indices(&self, keep: impl Fn(&Sample) -> bool) -> Vec<usize> {
        self.samples.iter().enumerate().filter(|(_, s)| keep(s)).map(|(i, _)| i).collect()
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| StarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| StarError::Json { path: path.to_path_buf(), source })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| StarError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| StarError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn split(known: &[&str], unknown: &[&str]) -> SplitFile {
        SplitFile { known: names(known), unknown: names(unknown) }
    }

    #[test]
    fn split_invariants() {
        let cats = names(&["a", "b", "c"]);
        let s = CategorySplit::new(&cats, &split(&["c", "a"], &["b"])).unwrap();
        assert_eq!(s.known(), &[0, 2]);
        assert_eq!(s.known_position(2), Some(1));
        assert_eq!(s.known_position(1), None);
        assert!(CategorySplit::new(&cats, &split(&["a", "b"], &["b", "c"])).is_err());
        assert!(CategorySplit::new(&cats, &split(&["a"], &["b"])).is_err());
        let err = CategorySplit::new(&cats, &split(&["a", "b", "c"], &[])).unwrap_err();
        assert!(err.to_string().contains("unknown set empty"));
    }

    #[test]
    fn unknown_category_with_training_role_is_rejected() {
        let cats = names(&["a", "b"]);
        let s = CategorySplit::new(&cats, &split(&["a"], &["b"])).unwrap();
        let entry = |id: &str, label: &str, role| SampleEntry {
            id: id.into(),
            label: label.into(),
            path: String::new(),
            role,
            features: BTreeMap::new(),
        };
        assert!(check_samples(&[entry("0", "a", Role::Train), entry("1", "b", Role::Test)], &s).is_ok());
        let err = check_samples(&[entry("0", "b", Role::Train)], &s).unwrap_err();
        assert!(matches!(err, StarError::Validation(_)));
        assert!(check_samples(&[entry("0", "z", Role::Test)], &s).is_err());
        assert!(check_samples(&[entry("0", "a", Role::Test), entry("0", "a", Role::Test)], &s).is_err());
    }
}
