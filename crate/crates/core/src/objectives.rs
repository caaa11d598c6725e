//! Multi-part, semantic and global cross-entropy objectives and their
//! weighted total.

use serde::{Deserialize, Serialize};
use star_tensor::{Graph, Scalar, Var};

use crate::error::{Result, StarError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub use_mpce: bool,
    pub use_sce: bool,
    pub use_gce: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, use_mpce: true, use_sce: true, use_gce: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(StarError::Config(format!(
                "loss weights must be finite and nonnegative (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if !(self.use_mpce || self.use_sce || self.use_gce) {
            return Err(StarError::Config("all loss terms are disabled".into()));
        }
        Ok(())
    }
}

/// How latent vectors are compared. `Dot` is the raw inner product;
/// `Cosine` normalizes both sides and divides by a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Dot,
    Cosine {
        temperature: f64,
    },
}

impl Similarity {
    /// `lhs [.., n, d]` against `rhs [c, d]` → logits `[.., n, c]`.
    pub fn logits<T: Scalar>(self, g: &mut Graph<T>, lhs: Var, rhs: Var) -> Result<Var> {
        let (lhs, rhs) = match self {
            Similarity::Dot => (lhs, rhs),
            Similarity::Cosine { .. } => (g.l2_normalize_lastdim(lhs)?, g.l2_normalize_lastdim(rhs)?),
        };
        let rt = g.transpose(rhs)?;
        let out = g.matmul(lhs, rt)?;
        match self {
            Similarity::Dot => Ok(out),
            Similarity::Cosine { temperature } => {
                if !(temperature > 0.0) {
                    return Err(StarError::Config(format!("temperature must be positive, got {temperature}")));
                }
                Ok(g.scale(out, 1.0 / temperature)?)
            }
        }
    }
}

/// Operands of the three objectives for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchLatents {
    /// `K` part latents, each `[B, d_lat]`.
    pub parts: Vec<Var>,
    /// `[B, d_lat]`.
    pub global: Var,
    /// Category indices into the full table.
    pub labels: Vec<usize>,
    /// `[K, |A|, d_lat]`.
    pub side: Var,
    /// `[|A|, d_lat]`.
    pub names: Var,
    /// Ascending known category indices.
    pub known: Vec<usize>,
}

fn known_targets(labels: &[usize], known: &[usize]) -> Result<Vec<usize>> {
    if known.len() < 2 {
        return Err(StarError::Contract(format!("need at least 2 known categories, got {}", known.len())));
    }
    labels
        .iter()
        .map(|l| {
            known
                .iter()
                .position(|k| k == l)
                .ok_or_else(|| StarError::Contract(format!("label {l} is not a known category")))
        })
        .collect()
}

fn check_batch<T: Scalar>(g: &Graph<T>, v: Var, labels: &[usize]) -> Result<()> {
    let s = g.shape(v);
    if s.len() != 2 || s[0] != labels.len() {
        return Err(StarError::Contract(format!("latents {s:?} do not match {} labels", labels.len())));
    }
    Ok(())
}

/// Per part, classify each sample's part latent against the known
/// categories' part side information; mean over samples and parts.
pub fn mpce<T: Scalar>(g: &mut Graph<T>, batch: &BatchLatents, sim: Similarity) -> Result<Var> {
    let targets = known_targets(&batch.labels, &batch.known)?;
    let side_shape = g.shape(batch.side).to_vec();
    if side_shape.len() != 3 || side_shape[0] != batch.parts.len() {
        return Err(StarError::Contract(format!(
            "side latents {side_shape:?} do not match {} parts",
            batch.parts.len()
        )));
    }
    let (a, d) = (side_shape[1], side_shape[2]);
    let mut acc: Option<Var> = None;
    for (e, &part) in batch.parts.iter().enumerate() {
        check_batch(g, part, &batch.labels)?;
        let rows: Vec<usize> = batch.known.iter().map(|&k| e * a + k).collect();
        let flat = g.reshape(batch.side, &[side_shape[0] * a, d])?;
        let known_side = g.gather_rows(flat, &rows)?;
        let logits = sim.logits(g, part, known_side)?;
        let ce = g.cross_entropy(logits, &targets)?;
        acc = Some(match acc {
            None => ce,
            Some(prev) => g.add(prev, ce)?,
        });
    }
    let sum = acc.ok_or_else(|| StarError::Contract("no parts".into()))?;
    Ok(g.scale(sum, 1.0 / batch.parts.len() as f64)?)
}

/// Every category's part side information classified against all category
/// names; mean over parts and categories.
pub fn sce<T: Scalar>(g: &mut Graph<T>, side: Var, names: Var, sim: Similarity) -> Result<Var> {
    let s = g.shape(side).to_vec();
    let n = g.shape(names).to_vec();
    if s.len() != 3 || n.len() != 2 || s[1] != n[0] || s[2] != n[1] {
        return Err(StarError::Tensor(star_tensor::TensorError::Shape { op: "sce", lhs: s, rhs: n }));
    }
    let (k, a, d) = (s[0], s[1], s[2]);
    let flat = g.reshape(side, &[k * a, d])?;
    let logits = sim.logits(g, flat, names)?;
    let targets: Vec<usize> = (0..k * a).map(|i| i % a).collect();
    Ok(g.cross_entropy(logits, &targets)?)
}

/// Global latent classified against the known category names; mean over
/// samples.
pub fn gce<T: Scalar>(
    g: &mut Graph<T>,
    global: Var,
    labels: &[usize],
    names: Var,
    known: &[usize],
    sim: Similarity,
) -> Result<Var> {
    let targets = known_targets(labels, known)?;
    check_batch(g, global, labels)?;
    let known_names = g.gather_rows(names, known)?;
    let logits = sim.logits(g, global, known_names)?;
    Ok(g.cross_entropy(logits, &targets)?)
}

/// The three loss nodes and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub mpce: Var,
    pub sce: Var,
    pub gce: Var,
    pub total: Var,
}

/// `L_mpce + α·L_sce + β·L_gce`, skipping disabled terms.
pub fn total<T: Scalar>(g: &mut Graph<T>, l_mpce: Var, l_sce: Var, l_gce: Var, w: &LossWeights) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if w.use_mpce {
        terms.push(l_mpce);
    }
    if w.use_sce {
        terms.push(g.scale(l_sce, w.alpha)?);
    }
    if w.use_gce {
        terms.push(g.scale(l_gce, w.beta)?);
    }
    let (&first, rest) = terms.split_first().ok_or_else(|| StarError::Config("all loss terms are disabled".into()))?;
    let mut acc = first;
    for &t in rest {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Host-side form of [`total`] for logged values.
pub fn total_value(l_mpce: f64, l_sce: f64, l_gce: f64, w: &LossWeights) -> f64 {
    let mut t = 0.0;
    if w.use_mpce {
        t += l_mpce;
    }
    if w.use_sce {
        t += w.alpha * l_sce;
    }
    if w.use_gce {
        t += w.beta * l_gce;
    }
    t
}

pub fn all_terms<T: Scalar>(
    g: &mut Graph<T>,
    batch: &BatchLatents,
    w: &LossWeights,
    sim: Similarity,
) -> Result<LossTerms> {
    let mpce = mpce(g, batch, sim)?;
    let sce = sce(g, batch.side, batch.names, sim)?;
    let gce = gce(g, batch.global, &batch.labels, batch.names, &batch.known, sim)?;
    let total = total(g, mpce, sce, gce, w)?;
    Ok(LossTerms { mpce, sce, gce, total })
}
