//! Independent reference implementations shared by the integration tests.
//! Plain nested loops over `Vec`s; nothing here touches the graph.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut SplitMix64, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    let inner = b.len();
    let cols = b[0].len();
    a.iter().map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()).collect()
}

/// `-log softmax(logits)[target]`, written directly from the definition.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    -(logits[target] - max - z.ln())
}

/// Part latents `[B][K][d]`, side `[K][A][d]`, labels index the full table.
pub fn mpce(parts: &[Mat], side: &[Mat], labels: &[usize], known: &[usize]) -> f64 {
    let (b, k) = (parts.len(), side.len());
    let mut total = 0.0;
    for i in 0..b {
        for e in 0..k {
            let logits: Vec<f64> = known.iter().map(|&a| dot(&parts[i][e], &side[e][a])).collect();
            let target = known.iter().position(|&a| a == labels[i]).unwrap();
            total += cross_entropy(&logits, target);
        }
    }
    total / (b * k) as f64
}

pub fn sce(side: &[Mat], names: &[Vec<f64>]) -> f64 {
    let (k, a) = (side.len(), names.len());
    let mut total = 0.0;
    for part in side {
        for (c, row) in part.iter().enumerate() {
            let logits: Vec<f64> = names.iter().map(|n| dot(row, n)).collect();
            total += cross_entropy(&logits, c);
        }
    }
    total / (k * a) as f64
}

pub fn gce(global: &[Vec<f64>], labels: &[usize], names: &[Vec<f64>], known: &[usize]) -> f64 {
    let mut total = 0.0;
    for (f, &l) in global.iter().zip(labels) {
        let logits: Vec<f64> = known.iter().map(|&a| dot(f, &names[a])).collect();
        total += cross_entropy(&logits, known.iter().position(|&a| a == l).unwrap());
    }
    total / global.len() as f64
}

/// Multi-head cross-attention with explicit loops over heads, queries and
/// keys. `prompt` is `[m][C]`, `tokens` `[N][C]`, weights `[C][C]`.
pub fn attention(prompt: &[Vec<f64>], tokens: &[Vec<f64>], w: [&Mat; 4], heads: usize) -> Mat {
    let [wq, wk, wv, wo] = w;
    let c = wq.len();
    let d = c / heads;
    let q = matmul(prompt, wq);
    let k = matmul(tokens, wk);
    let v = matmul(tokens, wv);
    let mut joined = vec![vec![0.0; c]; prompt.len()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for (qi, qrow) in q.iter().enumerate() {
            let scores: Vec<f64> =
                k.iter().map(|krow| cols.clone().map(|j| qrow[j] * krow[j]).sum::<f64>() / (d as f64).sqrt()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for (ki, s) in scores.iter().enumerate() {
                let p = (s - max).exp() / z;
                for j in cols.clone() {
                    joined[qi][j] += p * v[ki][j];
                }
            }
        }
    }
    matmul(&joined, wo)
}
