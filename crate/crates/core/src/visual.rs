//! Skeleton stream: part feature maps, prompt-queried cross-attention, FFN,
//! projection into the shared latent space, and the global representation.

use serde::{Deserialize, Serialize};
use star_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::{Result, StarError};
use crate::nn::{fan_in_uniform, gaussian, Linear, Mlp};
use crate::rng::Stream;

/// Per-joint input channels: position and frame-to-frame displacement.
pub const INPUT_CHANNELS: usize = 6;

/// `[3, T, V_e, M]` part tensor → `[M, T, V_e, 6]` encoder input with
/// `(x, y, z, Δx, Δy, Δz)` per joint; the first frame's displacement is 0.
pub fn encoder_input(part: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = part.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(StarError::Data(format!("part tensor must be [3, T, V, M], got {s:?}")));
    }
    let (t, v, m) = (s[1], s[2], s[3]);
    let at = |c: usize, tt: usize, j: usize, p: usize| part.data()[((c * t + tt) * v + j) * m + p];
    let mut out = Vec::with_capacity(m * t * v * INPUT_CHANNELS);
    for p in 0..m {
        for tt in 0..t {
            for j in 0..v {
                for c in 0..3 {
                    out.push(at(c, tt, j, p));
                }
                for c in 0..3 {
                    out.push(if tt == 0 { 0.0 } else { at(c, tt, j, p) - at(c, tt - 1, j, p) });
                }
            }
        }
    }
    Ok(Tensor::new(&[m, t, v, INPUT_CHANNELS], out)?)
}

/// Small trainable stand-in for a pretrained skeleton backbone: a shared
/// per-joint affine lift to `C` channels, relu, then non-overlapping
/// temporal mean pooling with stride `s`. Persons are encoded separately
/// and summed.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub lift: Linear,
    pub channels: usize,
    pub stride: usize,
}

impl ToyEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Stream, channels: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(StarError::Config("temporal stride must be positive".into()));
        }
        Ok(Self {
            lift: Linear::with_gain(
                store,
                rng,
                "encoder.lift",
                (INPUT_CHANNELS, channels),
                true,
                std::f64::consts::SQRT_2,
            )?,
            channels,
            stride,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lift.params().collect()
    }

    /// `[B, M, T, V_e, 6]` → token view `[B, T̂·V_e, C]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: Var) -> Result<Var> {
        let s = g.shape(input).to_vec();
        if s.len() != 5 || s[4] != INPUT_CHANNELS {
            return Err(StarError::Data(format!("encoder input must be [B, M, T, V, 6], got {s:?}")));
        }
        let (b, m, t, v) = (s[0], s[1], s[2], s[3]);
        if t % self.stride != 0 {
            return Err(StarError::Config(format!("{t} frames are not divisible by temporal stride {}", self.stride)));
        }
        let t_hat = t / self.stride;
        let h = self.lift.forward(g, store, input)?;
        let h = g.relu(h)?;
        let h = g.reshape(h, &[b, m, t_hat, self.stride, v, self.channels])?;
        let h = g.mean_axis(h, 3)?;
        let h = g.sum_axis(h, 1)?;
        Ok(g.reshape(h, &[b, t_hat * v, self.channels])?)
    }

    /// Feature map `[T̂, V_e, C]` for each part of one sample.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, parts: &[Tensor<f32>]) -> Result<Vec<Tensor<T>>> {
        parts
            .iter()
            .map(|p| {
                let input = encoder_input(p)?;
                let mut shape = vec![1];
                shape.extend_from_slice(input.shape());
                let v = input.shape()[2];
                let mut g = Graph::<T>::new();
                let x = g.constant(input.cast::<T>().reshape(&shape)?);
                let tokens = self.forward(&mut g, store, x)?;
                let n = g.shape(tokens)[1];
                Ok(g.value(tokens).clone().reshape(&[n / v, v, self.channels])?)
            })
            .collect()
    }
}

/// Per-part multi-head cross-attention weights (no biases).
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlock {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Stream,
        prefix: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(StarError::Config(format!("width {width} is not divisible by {heads} heads")));
        }
        let mut w = |n: &str| store.add(format!("{prefix}.{n}"), fan_in_uniform(rng, width, width, 1.0));
        Ok(Self { w_q: w("w_q")?, w_k: w("w_k")?, w_v: w("w_v")?, w_o: w("w_o")?, heads })
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w_q, self.w_k, self.w_v, self.w_o]
    }
}

/// Prompt-queried cross-attention: `Q = P·W_q`, `K = f·W_k`, `V = f·W_v`,
/// per-head `softmax(Q Kᵀ / √d) V` with `d = width / heads`, heads
/// concatenated and mapped by `W_o`.
///
/// `tokens` is `[N, C]` or `[B, N, C]`; `prompt` is `[m, C]`. The output has
/// `m` rows per sample regardless of `N`.
pub fn cross_attend<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &AttentionBlock,
    tokens: Var,
    prompt: Var,
) -> Result<Var> {
    let width = g.shape(prompt)[g.shape(prompt).len() - 1];
    let token_width = *g.shape(tokens).last().expect("rank >= 1");
    if token_width != width {
        return Err(StarError::Tensor(star_tensor::TensorError::Shape {
            op: "cross_attend",
            lhs: g.shape(tokens).to_vec(),
            rhs: g.shape(prompt).to_vec(),
        }));
    }
    let d = width / block.heads;
    let scale = 1.0 / (d as f64).sqrt();
    let (wq, wk, wv, wo) =
        (g.param(store, block.w_q), g.param(store, block.w_k), g.param(store, block.w_v), g.param(store, block.w_o));
    let q = g.matmul(prompt, wq)?;
    let k = g.matmul(tokens, wk)?;
    let v = g.matmul(tokens, wv)?;
    let mut heads = Vec::with_capacity(block.heads);
    for h in 0..block.heads {
        let qh = g.slice_lastdim(q, h * d, d)?;
        let kh = g.slice_lastdim(k, h * d, d)?;
        let vh = g.slice_lastdim(v, h * d, d)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax_lastdim(scores)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let joined = if heads.len() == 1 { heads[0] } else { g.concat_lastdim(&heads)? };
    Ok(g.matmul(joined, wo)?)
}

/// `F_v^e = W · mean_rows(FFN(f̃) + P)`: prompt residual, attribute-mean
/// pooling, then projection. `attended` is `[.., m, C]`; without a prompt
/// the residual is skipped.
pub fn part_latent<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    attended: Var,
    prompt: Option<Var>,
    ffn: &Mlp,
    projection: &Linear,
) -> Result<Var> {
    let mut h = ffn.forward(g, store, attended)?;
    if let Some(p) = prompt {
        h = g.add(h, p)?;
    }
    let rows_axis = g.shape(h).len() - 2;
    let pooled = g.mean_axis(h, rows_axis)?;
    projection.forward(g, store, pooled)
}

/// Sum of the part latents.
pub fn global_representation<T: Scalar>(g: &mut Graph<T>, parts: &[Var]) -> Result<Var> {
    let (&first, rest) = parts
        .split_first()
        .ok_or_else(|| StarError::Contract("global representation needs at least one part".into()))?;
    let mut acc = first;
    for &p in rest {
        if g.shape(p) != g.shape(first) {
            return Err(StarError::Contract(format!(
                "part latents disagree in shape: {:?} vs {:?}",
                g.shape(first),
                g.shape(p)
            )));
        }
        acc = g.add(acc, p)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub width: usize,
    pub heads: usize,
    pub attributes: usize,
    pub ffn_hidden: usize,
    pub latent: usize,
    pub attention: bool,
    pub prompt: bool,
    pub shared_projection: bool,
}

#[derive(Debug, Clone)]
pub struct PartBranch {
    pub name: String,
    pub attention: AttentionBlock,
    pub ffn: Mlp,
    pub prompt: ParamId,
    /// Frozen per-channel token statistics, fitted on training data.
    pub token_mean: ParamId,
    pub token_scale: ParamId,
}

#[derive(Debug, Clone)]
pub struct VisualStream {
    pub config: VisualConfig,
    pub branches: Vec<PartBranch>,
    pub projections: Vec<Linear>,
}

impl VisualStream {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Stream,
        part_names: &[String],
        config: VisualConfig,
    ) -> Result<Self> {
        if config.attributes == 0 {
            return Err(StarError::Config("attribute count m must be at least 1".into()));
        }
        let c = config.width;
        let mut branches = Vec::with_capacity(part_names.len());
        for name in part_names {
            let prefix = format!("visual.{name}");
            let attention = AttentionBlock::new(store, rng, &prefix, c, config.heads)?;
            let ffn = Mlp::new(store, rng, &format!("{prefix}.ffn"), (c, config.ffn_hidden, c))?;
            let prompt = store.add(format!("{prefix}.prompt"), gaussian(rng, &[config.attributes, c], 0.02))?;
            if !config.prompt {
                store.set_trainable(prompt, false);
            }
            let token_mean = store.add(format!("{prefix}.token_mean"), Tensor::zeros(&[c]))?;
            let token_scale = store.add(format!("{prefix}.token_scale"), Tensor::ones(&[c]))?;
            store.set_trainable(token_mean, false);
            store.set_trainable(token_scale, false);
            branches.push(PartBranch { name: name.clone(), attention, ffn, prompt, token_mean, token_scale });
        }
        let projections = if config.shared_projection {
            vec![Linear::new(store, rng, "visual.projection", c, config.latent, false)?]
        } else {
            part_names
                .iter()
                .map(|n| Linear::new(store, rng, &format!("visual.{n}.projection"), c, config.latent, false))
                .collect::<Result<_>>()?
        };
        Ok(Self { config, branches, projections })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.extend(b.attention.params());
            out.extend(b.ffn.params());
            out.push(b.prompt);
            out.push(b.token_mean);
            out.push(b.token_scale);
        }
        for p in &self.projections {
            out.extend(p.params());
        }
        out
    }

    /// Set part `e`'s token statistics from sample tokens (`[.., C]`);
    /// near-constant channels keep unit scale.
    pub fn fit_token_stats<T: Scalar>(&self, store: &mut ParamStore<T>, e: usize, tokens: &[&Tensor<T>]) -> Result<()> {
        let c = self.config.width;
        let (mut sum, mut sq, mut n) = (vec![0f64; c], vec![0f64; c], 0usize);
        for t in tokens {
            if t.last_dim() != c {
                return Err(StarError::Contract(format!("token width {} differs from {c}", t.last_dim())));
            }
            for row in t.data().chunks(c) {
                for (k, &x) in row.iter().enumerate() {
                    let x = x.as_f64();
                    sum[k] += x;
                    sq[k] += x * x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(StarError::Contract("no tokens to fit statistics on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n as f64 - m * m).max(0.0).sqrt();
                if sd > 1e-6 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        let b = &self.branches[e];
        store.set_value(b.token_mean, Tensor::new(&[c], mean.into_iter().map(T::from_f64).collect())?)?;
        store.set_value(b.token_scale, Tensor::new(&[c], scale.into_iter().map(T::from_f64).collect())?)?;
        Ok(())
    }

    /// Part latents `F_v^e` (`[B, d_lat]` each) and their sum `F_v`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: &[Var],
    ) -> Result<(Vec<Var>, Var)> {
        if tokens.len() != self.branches.len() {
            return Err(StarError::Contract(format!("{} token sets for {} parts", tokens.len(), self.branches.len())));
        }
        let mut latents = Vec::with_capacity(tokens.len());
        for (e, (branch, &tok)) in self.branches.iter().zip(tokens).enumerate() {
            let projection = &self.projections[if self.projections.len() == 1 { 0 } else { e }];
            let (mean, scale) = (g.param(store, branch.token_mean), g.param(store, branch.token_scale));
            let centred = g.sub(tok, mean)?;
            let tok = g.mul(centred, scale)?;
            let prompt = g.param(store, branch.prompt);
            let latent = if self.config.attention {
                let attended = cross_attend(g, store, &branch.attention, tok, prompt)?;
                let residual = self.config.prompt.then_some(prompt);
                part_latent(g, store, attended, residual, &branch.ffn, projection)?
            } else {
                // Without attention every attribute row sees the token mean,
                // so the row mean of FFN(pooled) + P reduces to FFN(pooled) + mean(P).
                let rows_axis = g.shape(tok).len() - 2;
                let pooled = g.mean_axis(tok, rows_axis)?;
                let mut h = branch.ffn.forward(g, store, pooled)?;
                if self.config.prompt {
                    let mean_prompt = g.mean_axis(prompt, 0)?;
                    h = g.add(h, mean_prompt)?;
                }
                projection.forward(g, store, h)?
            };
            latents.push(latent);
        }
        let global = global_representation(g, &latents)?;
        Ok((latents, global))
    }
}
