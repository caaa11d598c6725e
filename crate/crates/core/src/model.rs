//! The full two-stream model: encoder, skeleton stream, semantic stream and
//! the batch objective.

use serde::{Deserialize, Serialize};
use star_tensor::{io, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::dataset::{Dataset, Sample};
use crate::error::{Result, StarError};
use crate::nn::Linear;
use crate::objectives::{all_terms, BatchLatents, LossTerms, LossWeights, Similarity};
use crate::rng::substream;
use crate::semantics::{SemanticConfig, SemanticEmbeddingSet, SemanticStream};
use crate::skeleton::{decompose_parts, preprocess, JointLayout, PartitionKind, PartitionStrategy};
use crate::visual::{encoder_input, ToyEncoder, VisualConfig, VisualStream, INPUT_CHANNELS};

/// Where part feature maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Toy encoder pretrained on known categories, then frozen; features
    /// are computed once.
    Pretrained,
    /// Toy encoder trained jointly with the full objective.
    Joint,
    /// Precomputed feature files listed in the dataset manifest.
    Files,
}

impl std::str::FromStr for EncoderMode {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(EncoderMode::Pretrained),
            "joint" => Ok(EncoderMode::Joint),
            "files" => Ok(EncoderMode::Files),
            other => Err(StarError::Config(format!("unknown encoder mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub partition: PartitionKind,
    pub frames: usize,
    pub persons: usize,
    pub stride: usize,
    pub width: usize,
    pub heads: usize,
    pub attributes: usize,
    pub ffn_hidden: usize,
    pub latent: usize,
    pub semantic_hidden: usize,
    pub attention: bool,
    pub visual_prompt: bool,
    pub semantic_prompt: bool,
    pub freeze_semantic: bool,
    pub shared_projection: bool,
    pub shared_side_projector: bool,
    pub encoder: EncoderMode,
    pub similarity: Similarity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            partition: PartitionKind::Six,
            frames: 32,
            persons: 1,
            stride: 4,
            width: 64,
            heads: 8,
            attributes: 100,
            ffn_hidden: 64,
            latent: 32,
            semantic_hidden: 64,
            attention: true,
            visual_prompt: true,
            semantic_prompt: true,
            freeze_semantic: false,
            shared_projection: true,
            shared_side_projector: true,
            encoder: EncoderMode::Pretrained,
            similarity: Similarity::Dot,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("persons", self.persons),
            ("stride", self.stride),
            ("width", self.width),
            ("heads", self.heads),
            ("attributes", self.attributes),
            ("ffn_hidden", self.ffn_hidden),
            ("latent", self.latent),
            ("semantic_hidden", self.semantic_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(StarError::Config(format!("`{name}` must be positive")));
        }
        if self.width % self.heads != 0 {
            return Err(StarError::Config(format!("width {} is not divisible by {} heads", self.width, self.heads)));
        }
        if self.frames % self.stride != 0 {
            return Err(StarError::Config(format!(
                "{} frames are not divisible by temporal stride {}",
                self.frames, self.stride
            )));
        }
        if let Similarity::Cosine { temperature } = self.similarity {
            if !(temperature > 0.0) {
                return Err(StarError::Config("cosine temperature must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-sample model input, one tensor per part: `[M, T, V_e, 6]` encoder
/// inputs in joint mode, `[N_e, C]` tokens otherwise.
pub type PartInputs = Vec<Tensor<f32>>;

#[derive(Debug, Clone)]
pub struct StarModel {
    pub config: ModelConfig,
    pub strategy: PartitionStrategy,
    pub categories: usize,
    pub sem_dim: usize,
    pub encoder: Option<ToyEncoder>,
    pub encoder_head: Option<Linear>,
    /// Frozen per-joint `(mean, 1/std)` of the six encoder input channels,
    /// each `[V, 6]`.
    pub input_norm: Option<(ParamId, ParamId)>,
    pub visual: VisualStream,
    pub semantic: SemanticStream,
}

impl StarModel {
    /// Build the model and its freshly initialised parameters. `known` is
    /// the number of known categories (the pretraining head's width).
    pub fn new<T: Scalar>(
        config: ModelConfig,
        layout: &JointLayout,
        categories: usize,
        known: usize,
        sem_dim: usize,
        seed: u64,
    ) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let strategy = PartitionStrategy::new(layout, config.partition)?;
        let mut store = ParamStore::new();
        let mut rng = substream(seed, "init");
        let (encoder, encoder_head, input_norm) = match config.encoder {
            EncoderMode::Files => (None, None, None),
            mode => {
                let v = layout.len();
                let mean = store.add("encoder.input_mean", Tensor::zeros(&[v, INPUT_CHANNELS]))?;
                let scale = store.add("encoder.input_scale", Tensor::ones(&[v, INPUT_CHANNELS]))?;
                store.set_trainable(mean, false);
                store.set_trainable(scale, false);
                let enc = ToyEncoder::new(&mut store, &mut rng, config.width, config.stride)?;
                let head = if mode == EncoderMode::Pretrained {
                    Some(Linear::new(&mut store, &mut rng, "encoder.head", config.width, known, true)?)
                } else {
                    None
                };
                (Some(enc), head, Some((mean, scale)))
            }
        };
        let visual = VisualStream::new(
            &mut store,
            &mut rng,
            &strategy.names,
            VisualConfig {
                width: config.width,
                heads: config.heads,
                attributes: config.attributes,
                ffn_hidden: config.ffn_hidden,
                latent: config.latent,
                attention: config.attention,
                prompt: config.visual_prompt,
                shared_projection: config.shared_projection,
            },
        )?;
        let semantic = SemanticStream::new(
            &mut store,
            &mut rng,
            SemanticConfig {
                parts: strategy.len(),
                categories,
                sem_dim,
                hidden: config.semantic_hidden,
                latent: config.latent,
                prompt: config.semantic_prompt,
                shared_side_projector: config.shared_side_projector,
            },
        )?;
        let model = Self { config, strategy, categories, sem_dim, encoder, encoder_head, input_norm, visual, semantic };
        if config.freeze_semantic {
            for id in model.semantic.params() {
                store.set_trainable(id, false);
            }
        }
        if config.encoder == EncoderMode::Pretrained {
            model.freeze_encoder(&mut store);
        }
        Ok((model, store))
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut out = self.encoder.as_ref().map(ToyEncoder::params).unwrap_or_default();
        if let Some(h) = &self.encoder_head {
            out.extend(h.params());
        }
        out
    }

    pub fn set_encoder_trainable<T: Scalar>(&self, store: &mut ParamStore<T>, trainable: bool) {
        for id in self.encoder_params() {
            store.set_trainable(id, trainable);
        }
    }

    pub fn freeze_encoder<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.set_encoder_trainable(store, false);
    }

    /// Whether batches carry raw encoder inputs rather than tokens.
    pub fn raw_inputs(&self) -> bool {
        self.config.encoder == EncoderMode::Joint
    }

    fn raw_encoder_inputs(&self, layout: &JointLayout, sample: &Sample) -> Result<PartInputs> {
        let seq = preprocess(&sample.seq, layout.root, self.config.frames, self.config.persons)?;
        decompose_parts(&seq, &self.strategy)?.iter().map(encoder_input).collect()
    }

    /// Preprocess a sample, split it into per-part encoder inputs and
    /// standardise each joint's channels.
    pub fn encoder_inputs<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        layout: &JointLayout,
        sample: &Sample,
    ) -> Result<PartInputs> {
        let mut parts = self.raw_encoder_inputs(layout, sample)?;
        if let Some((mean, scale)) = self.input_norm {
            let (mean, scale) = (store.get(mean).value(), store.get(scale).value());
            for (part, joints) in parts.iter_mut().zip(&self.strategy.joints) {
                let ve = joints.len();
                for (i, x) in part.data_mut().iter_mut().enumerate() {
                    let c = i % INPUT_CHANNELS;
                    let j = joints[(i / INPUT_CHANNELS) % ve];
                    let k = j * INPUT_CHANNELS + c;
                    *x = ((*x as f64 - mean.data()[k].as_f64()) * scale.data()[k].as_f64()) as f32;
                }
            }
        }
        Ok(parts)
    }

    /// Set the input standardisation from the given samples: per joint and
    /// channel, the mean and inverse standard deviation over samples,
    /// persons and frames. Near-constant channels keep unit scale.
    pub fn fit_input_norm<T: Scalar>(&self, store: &mut ParamStore<T>, ds: &Dataset, idx: &[usize]) -> Result<()> {
        let Some((mean_id, scale_id)) = self.input_norm else {
            return Ok(());
        };
        let v = ds.layout().len();
        let mut sum = vec![0f64; v * INPUT_CHANNELS];
        let mut sq = vec![0f64; v * INPUT_CHANNELS];
        let mut count = vec![0f64; v];
        for &i in idx {
            let parts = self.raw_encoder_inputs(ds.layout(), &ds.samples[i])?;
            for (part, joints) in parts.iter().zip(&self.strategy.joints) {
                let ve = joints.len();
                for (n, x) in part.data().iter().enumerate() {
                    let c = n % INPUT_CHANNELS;
                    let j = joints[(n / INPUT_CHANNELS) % ve];
                    sum[j * INPUT_CHANNELS + c] += *x as f64;
                    sq[j * INPUT_CHANNELS + c] += (*x as f64).powi(2);
                    if c == 0 {
                        count[j] += 1.0;
                    }
                }
            }
        }
        let mut mean = vec![T::zero(); v * INPUT_CHANNELS];
        let mut scale = vec![T::one(); v * INPUT_CHANNELS];
        for k in 0..v * INPUT_CHANNELS {
            let n = count[k / INPUT_CHANNELS];
            if n == 0.0 {
                continue;
            }
            let m = sum[k] / n;
            let sd = (sq[k] / n - m * m).max(0.0).sqrt();
            mean[k] = T::from_f64(m);
            if sd > 1e-6 {
                scale[k] = T::from_f64(1.0 / sd);
            }
        }
        store.set_value(mean_id, Tensor::new(&[v, INPUT_CHANNELS], mean)?)?;
        store.set_value(scale_id, Tensor::new(&[v, INPUT_CHANNELS], scale)?)?;
        Ok(())
    }

    /// Per-sample model inputs for every sample of `ds` in the current
    /// encoder mode (tokens for pretrained/files, raw inputs for joint).
    /// Fit the visual stream's token statistics on the samples `idx` of
    /// prepared inputs.
    pub fn fit_token_norm<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        inputs: &[PartInputs],
        idx: &[usize],
    ) -> Result<()> {
        for e in 0..self.strategy.len() {
            let tokens: Vec<Tensor<T>> = idx
                .iter()
                .map(|&i| {
                    let x = inputs[i][e].cast::<T>();
                    if !self.raw_inputs() {
                        return Ok(x);
                    }
                    let mut shape = vec![1];
                    shape.extend_from_slice(x.shape());
                    let mut g = Graph::<T>::new();
                    let v = g.constant(x.reshape(&shape)?);
                    let tok = self.encoder.as_ref().expect("joint mode has an encoder").forward(&mut g, store, v)?;
                    Ok(g.value(tok).clone())
                })
                .collect::<Result<_>>()?;
            self.visual.fit_token_stats(store, e, &tokens.iter().collect::<Vec<_>>())?;
        }
        Ok(())
    }

    pub fn prepare<T: Scalar>(&self, store: &ParamStore<T>, ds: &Dataset) -> Result<Vec<PartInputs>> {
        ds.samples.iter().map(|s| self.prepare_one(store, ds, s)).collect()
    }

    pub fn prepare_one<T: Scalar>(&self, store: &ParamStore<T>, ds: &Dataset, sample: &Sample) -> Result<PartInputs> {
        match self.config.encoder {
            EncoderMode::Joint => self.encoder_inputs(store, ds.layout(), sample),
            EncoderMode::Pretrained => {
                let enc = self.encoder.as_ref().expect("pretrained mode has an encoder");
                let inputs = self.encoder_inputs(store, ds.layout(), sample)?;
                inputs
                    .iter()
                    .map(|x| {
                        let mut shape = vec![1];
                        shape.extend_from_slice(x.shape());
                        let mut g = Graph::<T>::new();
                        let v = g.constant(x.cast::<T>().reshape(&shape)?);
                        let tok = enc.forward(&mut g, store, v)?;
                        let n = g.shape(tok)[1];
                        Ok(g.value(tok).cast::<f32>().reshape(&[n, self.config.width])?)
                    })
                    .collect()
            }
            EncoderMode::Files => self.feature_files(ds, sample),
        }
    }

    fn feature_files(&self, ds: &Dataset, sample: &Sample) -> Result<PartInputs> {
        let name = self.strategy.kind.name();
        let files = sample
            .features
            .get(name)
            .ok_or_else(|| StarError::Data(format!("sample `{}` lists no {name}-part feature files", sample.id)))?;
        if files.len() != self.strategy.len() {
            return Err(StarError::Data(format!(
                "sample `{}` lists {} feature files for {} parts",
                sample.id,
                files.len(),
                self.strategy.len()
            )));
        }
        files
            .iter()
            .map(|f| {
                let path = ds.dir.join(f);
                if !path.is_file() {
                    return Err(StarError::Data(format!("missing feature file {}", path.display())));
                }
                let t = io::read::<f32>(&path)?;
                let c = t.last_dim();
                if c != self.config.width {
                    return Err(StarError::Config(format!(
                        "{}: feature width {c} differs from attention width {}",
                        path.display(),
                        self.config.width
                    )));
                }
                let n = t.numel() / c;
                Ok(t.reshape(&[n, c])?)
            })
            .collect()
    }

    /// Stack the selected samples' inputs into one tensor per part.
    pub fn batch<T: Scalar>(&self, inputs: &[PartInputs], idx: &[usize]) -> Result<Vec<Tensor<T>>> {
        (0..self.strategy.len())
            .map(|e| {
                let first = &inputs[idx[0]][e];
                let mut shape = vec![idx.len()];
                shape.extend_from_slice(first.shape());
                let mut data = Vec::with_capacity(first.numel() * idx.len());
                for &i in idx {
                    let t = &inputs[i][e];
                    if t.shape() != first.shape() {
                        return Err(StarError::Data(format!(
                            "part {e} inputs disagree in shape: {:?} vs {:?}",
                            first.shape(),
                            t.shape()
                        )));
                    }
                    data.extend(t.data().iter().map(|&v| T::from_f64(v as f64)));
                }
                Ok(Tensor::new(&shape, data)?)
            })
            .collect()
    }

    /// Token sets `[B, N_e, C]` for a stacked batch.
    pub fn tokens<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: Vec<Tensor<T>>,
    ) -> Result<Vec<Var>> {
        batch
            .into_iter()
            .map(|t| {
                let v = g.constant(t);
                if self.raw_inputs() {
                    self.encoder.as_ref().expect("joint mode has an encoder").forward(g, store, v)
                } else {
                    Ok(v)
                }
            })
            .collect()
    }

    /// `(F_si, F_cn)` in the latent space.
    pub fn semantic_latents<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        emb: &SemanticEmbeddingSet,
    ) -> Result<(Var, Var)> {
        if emb.categories() != self.categories || emb.parts_count() != self.strategy.len() || emb.dim() != self.sem_dim
        {
            return Err(StarError::Compatibility(format!(
                "embeddings ({} categories, {} parts, dim {}) do not fit the model ({}, {}, {})",
                emb.categories(),
                emb.parts_count(),
                emb.dim(),
                self.categories,
                self.strategy.len(),
                self.sem_dim
            )));
        }
        let side = g.constant(emb.parts.cast::<T>());
        let names = g.constant(emb.names.cast::<T>());
        self.semantic.forward(g, store, side, names)
    }

    /// Objective terms for one batch of known-category samples.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        batch: Vec<Tensor<T>>,
        labels: &[usize],
        emb: &SemanticEmbeddingSet,
        known: &[usize],
        weights: &LossWeights,
    ) -> Result<LossTerms> {
        let tokens = self.tokens(g, store, batch)?;
        let (parts, global) = self.visual.forward(g, store, &tokens)?;
        let (side, names) = self.semantic_latents(g, store, emb)?;
        let latents = BatchLatents { parts, global, labels: labels.to_vec(), side, names, known: known.to_vec() };
        all_terms(g, &latents, weights, self.config.similarity)
    }

    /// Global latents `F_v` for the given samples, `[n, d_lat]`, computed in
    /// chunks.
    pub fn global_latents<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        inputs: &[PartInputs],
        idx: &[usize],
        chunk: usize,
    ) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(idx.len() * self.config.latent);
        for c in idx.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let tokens = self.tokens(&mut g, store, self.batch(inputs, c)?)?;
            let (_, global) = self.visual.forward(&mut g, store, &tokens)?;
            data.extend_from_slice(g.value(global).data());
        }
        Ok(Tensor::new(&[idx.len(), self.config.latent], data)?)
    }

    /// `(F_si, F_cn)` values.
    pub fn semantic_values<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        emb: &SemanticEmbeddingSet,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let (side, names) = self.semantic_latents(&mut g, store, emb)?;
        Ok((g.value(side).clone(), g.value(names).clone()))
    }

    /// Compatibility scores `[n, |A|]` between global latents and category
    /// names under the configured similarity.
    pub fn scores<T: Scalar>(&self, latents: &Tensor<T>, names: &Tensor<T>) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let l = g.constant(latents.clone());
        let n = g.constant(names.clone());
        let s = self.config.similarity.logits(&mut g, l, n)?;
        Ok(g.value(s).cast())
    }
}
