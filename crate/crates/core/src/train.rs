//! SGD training with a step learning-rate schedule, encoder pretraining,
//! per-epoch checkpoints and loss logging.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use star_tensor::{Graph, ParamStore, TensorError};

use crate::checkpoint::{self, config_hash, CheckpointMeta};
use crate::dataset::Dataset;
use crate::error::{Result, StarError};
use crate::model::{EncoderMode, ModelConfig, PartInputs, StarModel};
use crate::objectives::{total_value, LossWeights};
use crate::rng::substream;
use crate::semantics::SemanticEmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 0.001,
            lr_decay: 0.1,
            lr_milestones: vec![20, 30],
            weight_decay: 5e-4,
            loss: LossWeights::default(),
            seed: 0,
            pretrain_epochs: 20,
            pretrain_lr: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(StarError::Config("epochs and batch_size must be positive".into()));
        }
        let rates = [("lr", self.lr), ("lr_decay", self.lr_decay), ("pretrain_lr", self.pretrain_lr)];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(StarError::Config(format!("`{name}` must be positive, got {v}")));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(StarError::Config("`weight_decay` must be nonnegative".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StarError::Config("`lr_milestones` must be strictly increasing".into()));
        }
        self.loss.validate()
    }

    /// Learning rate during 0-based `epoch`: decayed once for every
    /// milestone at or below it.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(n as i32)
    }
}

/// Desk-scale setup for the synthetic reference runs: the default model
/// with m = 20 attribute prompts, trained at lr 0.2 on the default schedule.
pub fn reference_config(seed: u64) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig { attributes: 20, ..Default::default() };
    let train = TrainConfig { seed, lr: 0.2, ..Default::default() };
    (model, train)
}

/// Mean loss components over one epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_mpce: f64,
    pub l_sce: f64,
    pub l_gce: f64,
    pub l_total: f64,
}

/// A model under training with its parameters and cached inputs.
pub struct Trainer<'a> {
    pub model: StarModel,
    pub store: ParamStore<f32>,
    pub config: TrainConfig,
    pub dataset: &'a Dataset,
    pub embeddings: &'a SemanticEmbeddingSet,
    pub inputs: Vec<PartInputs>,
    /// Completed epochs.
    pub epoch: usize,
    pub out: Option<PathBuf>,
}

/// Non-finite values become a numeric abort at the 1-based `epoch` and `step`
/// given 0-based.
fn numeric(e: StarError, epoch: usize, step: usize) -> StarError {
    match e {
        StarError::Tensor(TensorError::NonFinite { .. }) => {
            StarError::NumericAbort { epoch: epoch + 1, step: step + 1 }
        }
        other => other,
    }
}

impl<'a> Trainer<'a> {
    /// Fresh model; pretrains the encoder first when configured to.
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        dataset: &'a Dataset,
        embeddings: &'a SemanticEmbeddingSet,
        out: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let (model, mut store) = StarModel::new::<f32>(
            model_config,
            dataset.layout(),
            dataset.split.len(),
            dataset.split.known().len(),
            embeddings.dim(),
            config.seed,
        )?;
        model.fit_input_norm(&mut store, dataset, &dataset.train_indices())?;
        if model_config.encoder == EncoderMode::Pretrained {
            pretrain_encoder(&model, &mut store, dataset, &config)?;
        }
        let inputs = model.prepare(&store, dataset)?;
        model.fit_token_norm(&mut store, &inputs, &dataset.train_indices())?;
        Self::assemble(model, store, inputs, config, dataset, embeddings, 0, out)
    }

    /// Continue from a checkpoint directory. The run's configuration must
    /// match the checkpoint's apart from the epoch count.
    pub fn resume(
        dir: &Path,
        config: TrainConfig,
        dataset: &'a Dataset,
        embeddings: &'a SemanticEmbeddingSet,
        out: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let (meta, model, store) = checkpoint::load(dir)?;
        let split = dataset.split.to_file();
        let expect = config_hash(&meta.model, &config, dataset.split.categories(), &split.known, embeddings.dim());
        if expect != meta.config_hash {
            return Err(StarError::Compatibility(format!(
                "{}: checkpoint was written by a different configuration or split",
                dir.display()
            )));
        }
        if meta.epoch > config.epochs {
            return Err(StarError::Config(format!(
                "checkpoint is at epoch {}, beyond the requested {}",
                meta.epoch, config.epochs
            )));
        }
        let inputs = model.prepare(&store, dataset)?;
        Self::assemble(model, store, inputs, config, dataset, embeddings, meta.epoch, out)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: StarModel,
        store: ParamStore<f32>,
        inputs: Vec<PartInputs>,
        config: TrainConfig,
        dataset: &'a Dataset,
        embeddings: &'a SemanticEmbeddingSet,
        epoch: usize,
        out: Option<&Path>,
    ) -> Result<Self> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| StarError::io(dir, e))?;
        }
        Ok(Self { model, store, config, dataset, embeddings, inputs, epoch, out: out.map(Path::to_path_buf) })
    }

    pub fn meta(&self) -> CheckpointMeta {
        let split = self.dataset.split.to_file();
        CheckpointMeta {
            epoch: self.epoch,
            seed: self.config.seed,
            config_hash: config_hash(
                &self.model.config,
                &self.config,
                self.dataset.split.categories(),
                &split.known,
                self.embeddings.dim(),
            ),
            model: self.model.config,
            train: self.config.clone(),
            layout: self.dataset.layout().clone(),
            categories: self.dataset.split.categories().to_vec(),
            known: split.known,
            sem_dim: self.embeddings.dim(),
            params: Vec::new(),
        }
    }

    pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
        out.join("checkpoints").join(format!("epoch_{epoch:04}"))
    }

    /// Shuffled training order for 0-based `epoch`; depends only on the
    /// seed and the epoch so a resumed run replays the same batches.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order = self.dataset.train_indices();
        order.shuffle(&mut substream(self.config.seed, &format!("shuffle/{epoch}")));
        order
    }

    /// Run one epoch and return its mean losses.
    pub fn step_epoch(&mut self) -> Result<EpochLoss> {
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        let known = self.dataset.split.known().to_vec();
        let order = self.epoch_order(epoch);
        let (mut sums, mut steps) = ([0f64; 4], 0usize);
        for (step, batch_idx) in order.chunks(self.config.batch_size).enumerate() {
            let labels: Vec<usize> = batch_idx.iter().map(|&i| self.dataset.samples[i].seq.label).collect();
            if let Some(&bad) = labels.iter().find(|&&l| !self.dataset.split.is_known(l)) {
                return Err(StarError::Contract(format!(
                    "training batch contains unknown category `{}`",
                    self.dataset.split.categories()[bad]
                )));
            }
            let batch = self.model.batch::<f32>(&self.inputs, batch_idx)?;
            let mut g = Graph::new();
            let terms = self
                .model
                .batch_loss(&mut g, &self.store, batch, &labels, self.embeddings, &known, &self.config.loss)
                .map_err(|e| numeric(e, epoch, step))?;
            let vals = [terms.mpce, terms.sce, terms.gce, terms.total].map(|v| g.value(v).item() as f64);
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(StarError::NumericAbort { epoch: epoch + 1, step: step + 1 });
            }
            self.store.zero_grad();
            g.backward(terms.total, &mut self.store).map_err(|e| numeric(StarError::Tensor(e), epoch, step))?;
            self.store.sgd_step(lr, self.config.weight_decay)?;
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            steps += 1;
        }
        self.epoch += 1;
        let n = steps as f64;
        let (l_mpce, l_sce, l_gce) = (sums[0] / n, sums[1] / n, sums[2] / n);
        Ok(EpochLoss {
            epoch: self.epoch,
            l_mpce,
            l_sce,
            l_gce,
            l_total: total_value(l_mpce, l_sce, l_gce, &self.config.loss),
        })
    }

    /// Train up to the configured epoch count, checkpointing and logging
    /// after each epoch when an output directory is set.
    pub fn fit(&mut self) -> Result<Vec<EpochLoss>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let loss = self.step_epoch()?;
            if let Some(out) = self.out.clone() {
                checkpoint::save(&Self::checkpoint_dir(&out, self.epoch), &self.meta(), &self.store)?;
                let path = out.join("loss.jsonl");
                let mut f =
                    OpenOptions::new().create(true).append(true).open(&path).map_err(|e| StarError::io(&path, e))?;
                let line = serde_json::to_string(&loss).expect("plain struct");
                writeln!(f, "{line}").map_err(|e| StarError::io(&path, e))?;
            }
            log.push(loss);
        }
        Ok(log)
    }
}

/// Fit the toy encoder and a linear head on known-category training
/// samples, then freeze both.
pub fn pretrain_encoder(
    model: &StarModel,
    store: &mut ParamStore<f32>,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<()> {
    let enc = model.encoder.as_ref().ok_or_else(|| StarError::Contract("no encoder to pretrain".into()))?;
    let head = model.encoder_head.as_ref().ok_or_else(|| StarError::Contract("no pretraining head".into()))?;
    let train = ds.train_indices();
    let raw: Vec<PartInputs> =
        train.iter().map(|&i| model.encoder_inputs(store, ds.layout(), &ds.samples[i])).collect::<Result<_>>()?;
    let targets: Vec<usize> = train
        .iter()
        .map(|&i| {
            ds.split
                .known_position(ds.samples[i].seq.label)
                .ok_or_else(|| StarError::Contract("pretraining sample of an unknown category".into()))
        })
        .collect::<Result<_>>()?;
    model.set_encoder_trainable(store, true);
    let all: Vec<usize> = (0..raw.len()).collect();
    for epoch in 0..config.pretrain_epochs {
        let mut order = all.clone();
        order.shuffle(&mut substream(config.seed, &format!("pretrain/{epoch}")));
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let mut g = Graph::new();
            let mut pooled = Vec::with_capacity(model.strategy.len());
            for part in model.batch::<f32>(&raw, idx)? {
                let x = g.constant(part);
                let tok = enc.forward(&mut g, store, x)?;
                pooled.push(g.mean_axis(tok, 1)?);
            }
            let mut acc = pooled[0];
            for &p in &pooled[1..] {
                acc = g.add(acc, p)?;
            }
            let feat = g.scale(acc, 1.0 / pooled.len() as f64)?;
            let logits = head.forward(&mut g, store, feat)?;
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let loss = g.cross_entropy(logits, &t).map_err(|e| numeric(StarError::Tensor(e), epoch, step))?;
            store.zero_grad();
            g.backward(loss, store)?;
            store.sgd_step(config.pretrain_lr, 0.0)?;
        }
    }
    model.freeze_encoder(store);
    Ok(())
}
