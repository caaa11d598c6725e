//! Run configuration: one flat TOML document whose keys double as
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use star_core::model::{EncoderMode, ModelConfig};
use star_core::objectives::{LossWeights, Similarity};
use star_core::semantics::EmbeddingProvider;
use star_core::skeleton::PartitionKind;
use star_core::train::TrainConfig;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    File,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Dot,
    Cosine,
}

macro_rules! run_config {
    ($($(#[$meta:meta])* $field:ident: $ty:ty,)*) => {
        /// Every key is optional; unset keys take the library defaults.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
        #[serde(deny_unknown_fields)]
        pub struct RunConfig {
            $(
                $(#[$meta])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl RunConfig {
            /// Keys set in `top` win over keys set here.
            pub fn overlay(self, top: RunConfig) -> RunConfig {
                RunConfig { $($field: top.$field.or(self.$field),)* }
            }
        }
    };
}

run_config! {
    /// Dataset directory written by `gen-data` or laid out the same way
    #[arg(long)]
    dataset: PathBuf,
    /// Split file replacing the dataset's own split
    #[arg(long)]
    split: PathBuf,
    /// Side-information JSON for the pseudo embedder
    #[arg(long)]
    side_info: PathBuf,
    /// Where category and part embeddings come from
    #[arg(long, value_enum)]
    embedding: Provider,
    /// Width of pseudo embeddings
    #[arg(long)]
    embedding_dim: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    batch_size: usize,
    #[arg(long)]
    lr: f64,
    /// Factor applied to the learning rate at each milestone
    #[arg(long)]
    lr_decay: f64,
    /// Comma-separated epochs at which the learning rate decays
    #[arg(long, value_delimiter = ',')]
    lr_milestones: Vec<usize>,
    #[arg(long)]
    weight_decay: f64,
    #[arg(long)]
    pretrain_epochs: usize,
    #[arg(long)]
    pretrain_lr: f64,
    /// Weight of the semantic cross-entropy term
    #[arg(long)]
    alpha: f64,
    /// Weight of the global cross-entropy term
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    use_mpce: bool,
    #[arg(long)]
    use_sce: bool,
    #[arg(long)]
    use_gce: bool,

    /// Body partition: two, four or six parts
    #[arg(long)]
    partition: PartitionKind,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    persons: usize,
    #[arg(long)]
    stride: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    heads: usize,
    /// Number of visual attribute prompts
    #[arg(long)]
    attributes: usize,
    #[arg(long)]
    ffn_hidden: usize,
    #[arg(long)]
    latent: usize,
    #[arg(long)]
    semantic_hidden: usize,
    #[arg(long)]
    attention: bool,
    #[arg(long)]
    visual_prompt: bool,
    #[arg(long)]
    semantic_prompt: bool,
    #[arg(long)]
    freeze_semantic: bool,
    #[arg(long)]
    shared_projection: bool,
    #[arg(long)]
    shared_side_projector: bool,
    /// pretrained, joint or files
    #[arg(long)]
    encoder: EncoderMode,
    #[arg(long, value_enum)]
    similarity: SimilarityKind,
    /// Temperature of cosine similarity
    #[arg(long)]
    temperature: f64,
}

/// A resolved run: every key filled in and turned into library types.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub echo: RunConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub side_info: Option<PathBuf>,
    pub provider: EmbeddingProvider,
    pub out: Option<PathBuf>,
}

impl Resolved {
    pub fn dataset(&self) -> Result<&Path, Failure> {
        self.dataset.as_deref().ok_or_else(|| {
            Failure::usage("missing required key `dataset` (set it in the config file or pass --dataset)")
        })
    }

    pub fn write_echo(&self, dir: &Path, name: &str) -> Result<(), Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let text = toml::to_string(&self.echo).map_err(|e| Failure::usage(format!("cannot serialise config: {e}")))?;
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Failure::io(&path, e))
    }
}

fn defaults() -> RunConfig {
    let m = ModelConfig::default();
    let t = TrainConfig::default();
    let (similarity, temperature) = match m.similarity {
        Similarity::Dot => (SimilarityKind::Dot, 0.1),
        Similarity::Cosine { temperature } => (SimilarityKind::Cosine, temperature),
    };
    RunConfig {
        embedding: Some(Provider::File),
        embedding_dim: Some(64),
        seed: Some(t.seed),
        epochs: Some(t.epochs),
        batch_size: Some(t.batch_size),
        lr: Some(t.lr),
        lr_decay: Some(t.lr_decay),
        lr_milestones: Some(t.lr_milestones),
        weight_decay: Some(t.weight_decay),
        pretrain_epochs: Some(t.pretrain_epochs),
        pretrain_lr: Some(t.pretrain_lr),
        alpha: Some(t.loss.alpha),
        beta: Some(t.loss.beta),
        use_mpce: Some(t.loss.use_mpce),
        use_sce: Some(t.loss.use_sce),
        use_gce: Some(t.loss.use_gce),
        partition: Some(m.partition),
        frames: Some(m.frames),
        persons: Some(m.persons),
        stride: Some(m.stride),
        width: Some(m.width),
        heads: Some(m.heads),
        attributes: Some(m.attributes),
        ffn_hidden: Some(m.ffn_hidden),
        latent: Some(m.latent),
        semantic_hidden: Some(m.semantic_hidden),
        attention: Some(m.attention),
        visual_prompt: Some(m.visual_prompt),
        semantic_prompt: Some(m.semantic_prompt),
        freeze_semantic: Some(m.freeze_semantic),
        shared_projection: Some(m.shared_projection),
        shared_side_projector: Some(m.shared_side_projector),
        encoder: Some(m.encoder),
        similarity: Some(similarity),
        temperature: Some(temperature),
        ..Default::default()
    }
}

pub fn read_file(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Seed precedence: flag, then config file, then `STAR_SEED`, then the
/// default.
pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("STAR_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::usage(format!("STAR_SEED is not a seed: `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Layer defaults, the config file, `STAR_SEED` and flags.
pub fn resolve(file: Option<&Path>, flags: RunConfig) -> Result<Resolved, Failure> {
    let from_file = match file {
        Some(p) => read_file(p)?,
        None => RunConfig::default(),
    };
    let mut layered = from_file.overlay(flags);
    if layered.seed.is_none() {
        layered.seed = env_seed()?;
    }
    let c = defaults().overlay(layered);
    // defaults() fills every key below
    let similarity = match c.similarity.unwrap() {
        SimilarityKind::Dot => Similarity::Dot,
        SimilarityKind::Cosine => Similarity::Cosine { temperature: c.temperature.unwrap() },
    };
    let model = ModelConfig {
        partition: c.partition.unwrap(),
        frames: c.frames.unwrap(),
        persons: c.persons.unwrap(),
        stride: c.stride.unwrap(),
        width: c.width.unwrap(),
        heads: c.heads.unwrap(),
        attributes: c.attributes.unwrap(),
        ffn_hidden: c.ffn_hidden.unwrap(),
        latent: c.latent.unwrap(),
        semantic_hidden: c.semantic_hidden.unwrap(),
        attention: c.attention.unwrap(),
        visual_prompt: c.visual_prompt.unwrap(),
        semantic_prompt: c.semantic_prompt.unwrap(),
        freeze_semantic: c.freeze_semantic.unwrap(),
        shared_projection: c.shared_projection.unwrap(),
        shared_side_projector: c.shared_side_projector.unwrap(),
        encoder: c.encoder.unwrap(),
        similarity,
    };
    let train = TrainConfig {
        epochs: c.epochs.unwrap(),
        batch_size: c.batch_size.unwrap(),
        lr: c.lr.unwrap(),
        lr_decay: c.lr_decay.unwrap(),
        lr_milestones: c.lr_milestones.clone().unwrap(),
        weight_decay: c.weight_decay.unwrap(),
        loss: LossWeights {
            alpha: c.alpha.unwrap(),
            beta: c.beta.unwrap(),
            use_mpce: c.use_mpce.unwrap(),
            use_sce: c.use_sce.unwrap(),
            use_gce: c.use_gce.unwrap(),
        },
        seed: c.seed.unwrap(),
        pretrain_epochs: c.pretrain_epochs.unwrap(),
        pretrain_lr: c.pretrain_lr.unwrap(),
    };
    let provider = match c.embedding.unwrap() {
        Provider::File => EmbeddingProvider::File,
        Provider::Pseudo => EmbeddingProvider::Pseudo { dim: c.embedding_dim.unwrap() },
    };
    Ok(Resolved {
        dataset: c.dataset.clone(),
        split: c.split.clone(),
        side_info: c.side_info.clone(),
        out: c.out.clone(),
        provider,
        model,
        train,
        echo: c,
    })
}
