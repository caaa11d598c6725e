//! ZSL / GZSL evaluation with calibrated stacking, γ sweeps, reports and
//! embedding dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use star_tensor::{io, ParamStore, Tensor};

use crate::dataset::{write_json, CategorySplit, Dataset};
use crate::error::{Result, StarError};
use crate::model::{PartInputs, StarModel};
use crate::semantics::SemanticEmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Zsl,
    Gzsl,
}

impl std::str::FromStr for Mode {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(Mode::Zsl),
            "gzsl" => Ok(Mode::Gzsl),
            other => Err(StarError::Config(format!("unknown mode `{other}` (expected zsl or gzsl)"))),
        }
    }
}

/// `2SU / (S + U)`, or 0 when both are 0.
pub fn harmonic(s: f64, u: f64) -> f64 {
    if s == u {
        s
    } else if s + u > 0.0 {
        2.0 * (s * u) / (s + u)
    } else {
        0.0
    }
}

/// Calibrated-stacking prediction for one row of scores over all
/// categories. ZSL considers unknown categories only and ignores γ; GZSL
/// considers all and subtracts γ from known ones. Ties go to the lowest
/// index.
pub fn predict(scores: &[f64], mode: Mode, split: &CategorySplit, gamma: f64) -> Result<usize> {
    if scores.len() != split.len() {
        return Err(StarError::Contract(format!("{} scores for {} categories", scores.len(), split.len())));
    }
    let mut best: Option<(usize, f64)> = None;
    for (a, &s) in scores.iter().enumerate() {
        let known = split.is_known(a);
        let s = match mode {
            Mode::Zsl if known => continue,
            Mode::Zsl => s,
            Mode::Gzsl if known => s - gamma,
            Mode::Gzsl => s,
        };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((a, s));
        }
    }
    best.map(|(a, _)| a).ok_or_else(|| StarError::Contract("no candidate categories".into()))
}

/// Cached compatibility scores `F_v · F_cn` for a set of test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// `[n, |A|]`.
    pub scores: Tensor<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.scores.row(i)
    }
}

/// Scores for every test sample of `ds`.
pub fn score_table(
    model: &StarModel,
    store: &ParamStore<f32>,
    ds: &Dataset,
    inputs: &[PartInputs],
    emb: &SemanticEmbeddingSet,
) -> Result<ScoreTable> {
    let idx: Vec<usize> =
        ds.samples.iter().enumerate().filter(|(_, s)| s.role == crate::dataset::Role::Test).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(StarError::Data("dataset has no test samples".into()));
    }
    let latents = model.global_latents(store, inputs, &idx, 64)?;
    let (_, names) = model.semantic_values(store, emb)?;
    Ok(ScoreTable {
        ids: idx.iter().map(|&i| ds.samples[i].id.clone()).collect(),
        labels: idx.iter().map(|&i| ds.samples[i].seq.label).collect(),
        scores: model.scores(&latents, &names)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Category names for rows (true) and columns (predicted).
    pub categories: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.categories {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.categories.iter().zip(&self.counts) {
            s.push_str(c);
            for n in row {
                let _ = write!(s, ",{n}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    /// `None` in ZSL mode, where calibration does not apply.
    pub gamma: Option<f64>,
    /// ZSL top-1 accuracy over unknown-category test samples.
    pub accuracy: Option<f64>,
    /// GZSL accuracy over known-category test samples.
    pub seen: Option<f64>,
    /// GZSL accuracy over unknown-category test samples.
    pub unseen: Option<f64>,
    pub harmonic: Option<f64>,
    pub per_category: BTreeMap<String, f64>,
    pub confusion: Confusion,
    pub samples: usize,
}

impl MetricsReport {
    /// Headline numbers on one line, each in shortest round-trip form.
    pub fn summary(&self) -> String {
        match self.mode {
            Mode::Zsl => format!("mode zsl  acc {}", self.accuracy.unwrap_or(0.0)),
            Mode::Gzsl => format!(
                "mode gzsl  gamma {}  S {}  U {}  H {}",
                self.gamma.unwrap_or(0.0),
                self.seen.unwrap_or(0.0),
                self.unseen.unwrap_or(0.0),
                self.harmonic.unwrap_or(0.0)
            ),
        }
    }
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Metrics from cached scores. ZSL uses the unknown-category test samples;
/// GZSL uses all test samples.
pub fn evaluate(table: &ScoreTable, split: &CategorySplit, mode: Mode, gamma: f64) -> Result<MetricsReport> {
    let rows: Vec<usize> =
        (0..table.len()).filter(|&i| mode == Mode::Gzsl || !split.is_known(table.labels[i])).collect();
    if rows.is_empty() {
        return Err(StarError::Data(format!("no test samples for {mode:?} evaluation")));
    }
    let cats: Vec<usize> = match mode {
        Mode::Zsl => split.unknown().to_vec(),
        Mode::Gzsl => (0..split.len()).collect(),
    };
    let pos = |a: usize| cats.iter().position(|&c| c == a).expect("candidate");
    let mut counts = vec![vec![0usize; cats.len()]; cats.len()];
    let (mut seen, mut unseen) = ((0usize, 0usize), (0usize, 0usize));
    for &i in &rows {
        let truth = table.labels[i];
        let pred = predict(table.row(i), mode, split, gamma)?;
        counts[pos(truth)][pos(pred)] += 1;
        let bucket = if split.is_known(truth) { &mut seen } else { &mut unseen };
        bucket.1 += 1;
        if pred == truth {
            bucket.0 += 1;
        }
    }
    let per_category = cats
        .iter()
        .enumerate()
        .filter(|(k, _)| counts[*k].iter().sum::<usize>() > 0)
        .map(|(k, &c)| (split.categories()[c].clone(), rate(counts[k][k], counts[k].iter().sum())))
        .collect();
    let confusion = Confusion { categories: cats.iter().map(|&c| split.categories()[c].clone()).collect(), counts };
    let report = match mode {
        Mode::Zsl => MetricsReport {
            mode,
            gamma: None,
            accuracy: Some(rate(unseen.0, unseen.1)),
            seen: None,
            unseen: None,
            harmonic: None,
            per_category,
            confusion,
            samples: rows.len(),
        },
        Mode::Gzsl => {
            if seen.1 == 0 || unseen.1 == 0 {
                return Err(StarError::Data("GZSL needs known and unknown test samples".into()));
            }
            let (s, u) = (rate(seen.0, seen.1), rate(unseen.0, unseen.1));
            MetricsReport {
                mode,
                gamma: Some(gamma),
                accuracy: None,
                seen: Some(s),
                unseen: Some(u),
                harmonic: Some(harmonic(s, u)),
                per_category,
                confusion,
                samples: rows.len(),
            }
        }
    };
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepResult {
    pub points: Vec<SweepPoint>,
    /// Index of the first point with the highest H.
    pub best: usize,
}

impl GammaSweepResult {
    pub fn best_point(&self) -> SweepPoint {
        self.points[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma,S,U,H\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6},{:.6},{:.6},{:.6}", p.gamma, p.seen, p.unseen, p.harmonic);
        }
        s
    }
}

/// GZSL metrics at every γ of a strictly ascending list, from one score
/// table. Checks on the way that every sample predicted as an unknown
/// category keeps that prediction at every larger γ.
pub fn gamma_sweep(table: &ScoreTable, split: &CategorySplit, gammas: &[f64]) -> Result<GammaSweepResult> {
    if gammas.is_empty() {
        return Err(StarError::Contract("empty gamma list".into()));
    }
    if gammas.iter().any(|g| !g.is_finite()) || gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StarError::Contract("gamma list must be finite and strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(gammas.len());
    let mut previous: Option<Vec<usize>> = None;
    for &gamma in gammas {
        let preds: Vec<usize> =
            (0..table.len()).map(|i| predict(table.row(i), Mode::Gzsl, split, gamma)).collect::<Result<_>>()?;
        if let Some(prev) = &previous {
            let broken = prev.iter().zip(&preds).position(|(&p, &q)| !split.is_known(p) && p != q);
            if let Some(i) = broken {
                return Err(StarError::Contract(format!(
                    "sample `{}` left its unknown-category prediction as gamma rose to {gamma}",
                    table.ids[i]
                )));
            }
        }
        let r = evaluate(table, split, Mode::Gzsl, gamma)?;
        let point = SweepPoint {
            gamma,
            seen: r.seen.expect("gzsl"),
            unseen: r.unseen.expect("gzsl"),
            harmonic: r.harmonic.expect("gzsl"),
        };
        if let Some(last) = points.last() {
            let last: &SweepPoint = last;
            if point.seen > last.seen || point.unseen < last.unseen {
                return Err(StarError::Contract(format!("S/U moved against gamma at {gamma}")));
            }
        }
        points.push(point);
        previous = Some(preds);
    }
    let best = points.iter().enumerate().fold(0, |b, (i, p)| if p.harmonic > points[b].harmonic { i } else { b });
    Ok(GammaSweepResult { points, best })
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Default sweep grid: 0 up to the largest known-vs-unknown score gap in
/// the table, so the final point routes every sample to an unknown
/// category.
pub fn default_gammas(table: &ScoreTable, split: &CategorySplit, n: usize) -> Vec<f64> {
    let mut spread = 0f64;
    for i in 0..table.len() {
        let row = table.row(i);
        let best_known = split.known().iter().map(|&a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let best_unknown = split.unknown().iter().map(|&a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        spread = spread.max(best_known - best_unknown);
    }
    let hi = if spread > 0.0 { spread * 1.001 + 1e-9 } else { 1.0 };
    linspace(0.0, hi, n.max(2))
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    let path = dir.join("confusion.csv");
    fs::write(&path, report.confusion.to_csv()).map_err(|e| StarError::io(&path, e))
}

pub fn write_sweep(dir: &Path, sweep: &GammaSweepResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;
    let path = dir.join("sweep.csv");
    fs::write(&path, sweep.to_csv()).map_err(|e| StarError::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpIndex {
    pub samples: Vec<String>,
    pub labels: Vec<String>,
    pub categories: Vec<String>,
    pub files: BTreeMap<String, String>,
}

/// Write `F_v` for every test sample, `F_si` and `F_cn` for every category,
/// plus `index.json`.
pub fn dump_embeddings(
    dir: &Path,
    model: &StarModel,
    store: &ParamStore<f32>,
    ds: &Dataset,
    inputs: &[PartInputs],
    emb: &SemanticEmbeddingSet,
) -> Result<DumpIndex> {
    fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;
    let idx: Vec<usize> =
        ds.samples.iter().enumerate().filter(|(_, s)| s.role == crate::dataset::Role::Test).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(StarError::Data("dataset has no test samples".into()));
    }
    let latents = model.global_latents(store, inputs, &idx, 64)?;
    let (side, names) = model.semantic_values(store, emb)?;
    let mut files = BTreeMap::new();
    for (key, t) in [("visual", &latents), ("side", &side), ("names", &names)] {
        let file = format!("{key}.stnsr");
        io::write(dir.join(&file), t)?;
        files.insert(key.to_string(), file);
    }
    let index = DumpIndex {
        samples: idx.iter().map(|&i| ds.samples[i].id.clone()).collect(),
        labels: idx.iter().map(|&i| ds.split.categories()[ds.samples[i].seq.label].clone()).collect(),
        categories: ds.split.categories().to_vec(),
        files,
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}
