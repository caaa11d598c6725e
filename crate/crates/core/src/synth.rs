//! Synthetic action generator. Each category moves every body region with
//! its own sinusoid, and its embeddings are fixed random projections of the
//! same motion parameters, so unseen categories are reachable through the
//! semantics.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use star_tensor::{io, Tensor};

use crate::dataset::{write_json, DatasetManifest, Role, SampleEntry, SemanticFiles, SplitFile};
use crate::error::{Result, StarError};
use crate::rng::{normal, substream, uniform, Stream};
use crate::semantics::SideInfoRecord;
use crate::skeleton::{JointLayout, PartitionKind, PartitionStrategy, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub categories: usize,
    pub known: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub frames: usize,
    pub noise: f64,
    pub sem_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            categories: 12,
            known: 9,
            train_per_category: 40,
            test_per_category: 20,
            frames: 32,
            noise: 0.05,
            sem_dim: 64,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 2 {
            return Err(StarError::Config("need at least 2 categories".into()));
        }
        if self.known == 0 {
            return Err(StarError::Validation("known set empty".into()));
        }
        if self.known >= self.categories {
            return Err(StarError::Validation(format!(
                "unknown set empty: {} known of {} categories",
                self.known, self.categories
            )));
        }
        if self.train_per_category == 0 || self.test_per_category == 0 {
            return Err(StarError::Config("samples per category must be positive".into()));
        }
        if self.frames == 0 || self.sem_dim == 0 {
            return Err(StarError::Config("frames and embedding dim must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(StarError::Config(format!("noise must be finite and nonnegative, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Motion of one body region: `amp · sin(2π·freq·t/T + phase) · dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMotion {
    pub freq: f64,
    pub amp: f64,
    pub dir: [f64; 3],
    pub phase: f64,
}

impl RegionMotion {
    fn draw(rng: &mut Stream) -> Self {
        let freq = uniform(rng, 0.5, 3.0);
        let amp = uniform(rng, 0.05, 0.25);
        let mut dir = [normal(rng), normal(rng), normal(rng)];
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= n);
        // `dir` and `-dir` with phase shifted by π are the same motion; keep
        // one representative so parameters identify the motion.
        if dir[2] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        let phase = uniform(rng, 0.0, 2.0 * PI);
        Self { freq, amp, dir, phase }
    }

    /// Parameters rescaled to roughly `[-1, 1]`; phase is down-weighted.
    pub fn features(&self) -> [f64; 6] {
        [
            (self.freq - 1.75) / 1.25,
            (self.amp - 0.15) / 0.1,
            self.dir[0],
            self.dir[1],
            self.dir[2],
            0.2 * (self.phase / PI - 1.0),
        ]
    }

    pub fn offset(&self, t: usize, frames: usize) -> [f64; 3] {
        let s = self.amp * (2.0 * PI * self.freq * t as f64 / frames as f64 + self.phase).sin();
        [s * self.dir[0], s * self.dir[1], s * self.dir[2]]
    }

    fn describe(&self, part: &str) -> String {
        let speed = match self.freq {
            f if f < 1.1 => "slowly",
            f if f < 2.0 => "steadily",
            _ => "quickly",
        };
        let size = match self.amp {
            a if a < 0.1 => "small",
            a if a < 0.18 => "moderate",
            _ => "large",
        };
        let axis = ["sideways", "up and down", "forward and back"];
        let main = (0..3).max_by(|&a, &b| self.dir[a].abs().total_cmp(&self.dir[b].abs())).expect("three axes");
        let start = if self.phase < PI { "rising" } else { "falling" };
        format!("the {part} swings {speed} {} in {size} arcs, starting {start}", axis[main])
    }
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn project(g: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| g[r * x.len()..(r + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Seeded `rows × cols` standard-normal matrix, row-major.
fn gaussian_matrix(rng: &mut Stream, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| normal(rng)).collect()
}

/// Category names: `action_00`, `action_01`, ...
pub fn category_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("action_{i:02}")).collect()
}

/// Write a synthetic dataset into `out` and return its manifest.
pub fn generate_synthetic(config: &SynthConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let layout = JointLayout::ntu25();
    let names = category_names(config.categories);

    let mut theta_rng = substream(seed, "synth/motion");
    let motions: Vec<Vec<RegionMotion>> = (0..config.categories)
        .map(|_| Region::ALL.iter().map(|_| RegionMotion::draw(&mut theta_rng)).collect())
        .collect();

    let mut order: Vec<usize> = (0..config.categories).collect();
    order.shuffle(&mut substream(seed, "synth/split"));
    let mut unknown: Vec<usize> = order[config.known..].to_vec();
    unknown.sort_unstable();
    let split = SplitFile {
        known: (0..config.categories).filter(|c| !unknown.contains(c)).map(|c| names[c].clone()).collect(),
        unknown: unknown.iter().map(|&c| names[c].clone()).collect(),
    };

    for sub in ["samples", "semantics", "side_info"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| StarError::io(&dir, e))?;
    }

    let mut samples = Vec::new();
    let (v, t) = (layout.len(), config.frames);
    for (c, name) in names.iter().enumerate() {
        let per_role = [(Role::Train, config.train_per_category), (Role::Test, config.test_per_category)];
        for (role, count) in per_role {
            if role == Role::Train && unknown.contains(&c) {
                continue;
            }
            let tag = if role == Role::Train { "train" } else { "test" };
            for i in 0..count {
                let id = format!("{name}_{tag}_{i:03}");
                let mut noise = substream(seed, &format!("synth/noise/{id}"));
                let mut data = vec![0f32; 3 * t * v];
                for ch in 0..3 {
                    for tt in 0..t {
                        for (j, joint) in layout.joints.iter().enumerate() {
                            let mut x = joint.rest[ch] as f64;
                            if j != layout.root {
                                let region = Region::ALL.iter().position(|r| *r == joint.region).expect("tagged");
                                x += motions[c][region].offset(tt, t)[ch];
                            }
                            if config.noise > 0.0 {
                                x += config.noise * normal(&mut noise);
                            }
                            data[(ch * t + tt) * v + j] = x as f32;
                        }
                    }
                }
                let path = format!("samples/{id}.stnsr");
                io::write(out.join(&path), &Tensor::new(&[3, t, v, 1], data)?)?;
                samples.push(SampleEntry { id, label: name.clone(), path, role, features: BTreeMap::new() });
            }
        }
    }

    // Semantics: a fixed random projection `G_r` per body region. A part
    // embeds the sum of its regions' projections and a category name the
    // sum over all regions, so `G = [G_1 .. G_6]` acts on the concatenated
    // parameters and every partition shares the same per-region blocks.
    let d = config.sem_dim;
    let blocks: Vec<Vec<f64>> = Region::ALL
        .iter()
        .map(|r| gaussian_matrix(&mut substream(seed, &format!("synth/side/{}", r.name())), d, 6))
        .collect();
    let embed = |m: &[RegionMotion], regions: &[usize]| {
        let mut acc = vec![0f64; d];
        for &r in regions {
            acc.iter_mut().zip(project(&blocks[r], d, &m[r].features())).for_each(|(a, p)| *a += p);
        }
        unit(acc)
    };
    let all: Vec<usize> = (0..Region::ALL.len()).collect();
    let name_rows: Vec<f32> = motions.iter().flat_map(|m| embed(m, &all)).collect();
    io::write(out.join("semantics/names.stnsr"), &Tensor::new(&[config.categories, d], name_rows)?)?;

    let mut part_files = BTreeMap::new();
    let mut side_files = BTreeMap::new();
    for kind in PartitionKind::ALL {
        let strategy = PartitionStrategy::new(&layout, kind)?;
        let groups = kind.groups();
        let sub = if kind == PartitionKind::Six { String::new() } else { format!("{}/", kind.name()) };
        if !sub.is_empty() {
            let dir = out.join("semantics").join(kind.name());
            fs::create_dir_all(&dir).map_err(|e| StarError::io(&dir, e))?;
        }
        let mut files = Vec::new();
        for (e, (_, regions)) in groups.iter().enumerate() {
            let ridx: Vec<usize> =
                regions.iter().map(|r| Region::ALL.iter().position(|x| x == r).expect("tagged")).collect();
            let rows: Vec<f32> = motions.iter().flat_map(|m| embed(m, &ridx)).collect();
            let rel = format!("semantics/{sub}part_{e}.stnsr");
            io::write(out.join(&rel), &Tensor::new(&[config.categories, d], rows)?)?;
            files.push(rel);
        }
        part_files.insert(kind.name().to_string(), files);

        let records: Vec<SideInfoRecord> = names
            .iter()
            .enumerate()
            .map(|(c, n)| SideInfoRecord {
                name: n.clone(),
                parts: groups
                    .iter()
                    .zip(&strategy.names)
                    .map(|((_, regions), part)| {
                        let text = regions
                            .iter()
                            .map(|r| {
                                let ri = Region::ALL.iter().position(|x| x == r).expect("tagged");
                                motions[c][ri].describe(r.name())
                            })
                            .collect::<Vec<_>>()
                            .join("; ");
                        (part.clone(), text)
                    })
                    .collect(),
            })
            .collect();
        let rel = format!("side_info/{}.json", kind.name());
        write_json(&out.join(&rel), &records)?;
        side_files.insert(kind.name().to_string(), rel);
    }

    let manifest = DatasetManifest {
        layout,
        categories: names,
        split: split.clone(),
        samples,
        semantics: Some(SemanticFiles {
            names: "semantics/names.stnsr".into(),
            parts: part_files,
            side_info: side_files,
            synthetic: true,
        }),
    };
    manifest.validate()?;
    write_json(&out.join("split.json"), &split)?;
    manifest.write(out)?;
    Ok(manifest)
}
