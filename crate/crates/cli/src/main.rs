//! `star`: generate synthetic data, train, evaluate, sweep γ and dump
//! embeddings.
//!
//! Exit codes: 0 success, 2 argument or config error, 3 I/O or data error,
//! 4 numeric abort, 5 checkpoint incompatible with the data.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use star_core::checkpoint::{self, CheckpointMeta};
use star_core::dataset::{Dataset, Role, SplitFile};
use star_core::eval::{self, Mode};
use star_core::model::StarModel;
use star_core::semantics::{EmbeddingProvider, SemanticEmbeddingSet};
use star_core::skeleton::{PartitionKind, PartitionStrategy};
use star_core::synth::{generate_synthetic, SynthConfig};
use star_core::train::Trainer;
use star_core::StarError;
use star_tensor::{ParamStore, TensorError};

use config::{resolve, Resolved, RunConfig};

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure { code: 3, message: format!("{}: {e}", path.display()) }
    }
}

impl From<StarError> for Failure {
    fn from(e: StarError) -> Self {
        let code = match &e {
            StarError::Config(_) | StarError::Validation(_) | StarError::Layout(_) | StarError::Contract(_) => 2,
            StarError::Io { .. } | StarError::Json { .. } | StarError::Data(_) => 3,
            StarError::NumericAbort { .. } => 4,
            StarError::Compatibility(_) => 5,
            StarError::Tensor(t) => match t {
                TensorError::Io { .. } | TensorError::Format { .. } => 3,
                TensorError::NonFinite { .. } => 4,
                TensorError::Contract(_) => 2,
                _ => 1,
            },
        };
        Failure { code, message: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "star", version, about = "Zero-shot skeleton action recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with split, side information and embeddings
    GenData(GenDataArgs),
    /// Train a model and write per-epoch checkpoints
    Train(TrainArgs),
    /// Evaluate a checkpoint in ZSL or GZSL mode
    Eval(EvalArgs),
    /// GZSL metrics over a list of calibration factors
    Sweep(SweepArgs),
    /// Write test-sample and category embeddings of a checkpoint
    Dump(DumpArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    categories: Option<usize>,
    /// Number of known categories; the rest are unknown
    #[arg(long)]
    known: Option<usize>,
    #[arg(long)]
    train_per_category: Option<usize>,
    #[arg(long)]
    test_per_category: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Standard deviation of per-joint noise
    #[arg(long)]
    noise: Option<f64>,
    /// Width of the stored embeddings
    #[arg(long)]
    sem_dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint directory
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "gzsl")]
    mode: Mode,
    /// Calibration factor subtracted from known-category scores (gzsl only)
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated ascending γ values; defaults to an even grid up to
    /// the largest known-vs-unknown score gap
    #[arg(long, value_delimiter = ',')]
    gamma_list: Option<Vec<f64>>,
    /// Size of the default grid
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Dump(a) => dump(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        categories: a.categories.unwrap_or(d.categories),
        known: a.known.unwrap_or(d.known),
        train_per_category: a.train_per_category.unwrap_or(d.train_per_category),
        test_per_category: a.test_per_category.unwrap_or(d.test_per_category),
        frames: a.frames.unwrap_or(d.frames),
        noise: a.noise.unwrap_or(d.noise),
        sem_dim: a.sem_dim.unwrap_or(d.sem_dim),
    };
    let seed = match a.seed {
        Some(s) => s,
        None => config::env_seed()?.unwrap_or(0),
    };
    let m = generate_synthetic(&config, seed, &a.out)?;
    let count = |role| m.samples.iter().filter(|s| s.role == role).count();
    println!(
        "{} categories ({} known, {} unknown), {} train and {} test samples in {}",
        m.categories.len(),
        m.split.known.len(),
        m.split.unknown.len(),
        count(Role::Train),
        count(Role::Test),
        a.out.display()
    );
    Ok(())
}

/// Dataset with the configured split, and embeddings for `partition`.
fn load_data(r: &Resolved, partition: PartitionKind) -> Result<(Dataset, SemanticEmbeddingSet)> {
    let mut ds = Dataset::load(r.dataset()?)?;
    if let Some(path) = &r.split {
        ds = ds.with_split(&SplitFile::read(path)?)?;
    }
    if r.side_info.is_some() && r.provider == EmbeddingProvider::File {
        eprintln!("warning: `side_info` is only used by the pseudo embedding provider");
    }
    let strategy = PartitionStrategy::new(ds.layout(), partition)?;
    let emb = SemanticEmbeddingSet::for_dataset(&ds, &strategy, r.provider, r.side_info.as_deref())?;
    Ok((ds, emb))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut r = resolve(a.config.as_deref(), a.run)?;
    let out = r.out.get_or_insert_with(|| PathBuf::from("runs/star")).clone();
    r.echo.out = Some(out.clone());
    if let Some(dir) = &a.resume {
        if checkpoint::read_meta(dir)?.model != r.model {
            return Err(StarError::Compatibility(format!(
                "{}: model keys differ from the checkpoint's",
                dir.display()
            ))
            .into());
        }
    }
    let (ds, emb) = load_data(&r, r.model.partition)?;
    r.write_echo(&out, "config.toml")?;
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(dir, r.train.clone(), &ds, &emb, Some(&out))?,
        None => Trainer::new(r.model, r.train.clone(), &ds, &emb, Some(&out))?,
    };
    let log = trainer.fit()?;
    for l in &log {
        println!(
            "epoch {:>3}  loss {:.6}  mpce {:.6}  sce {:.6}  gce {:.6}",
            l.epoch, l.l_total, l.l_mpce, l.l_sce, l.l_gce
        );
    }
    println!("checkpoint {}", Trainer::checkpoint_dir(&out, trainer.epoch).display());
    Ok(())
}

struct Loaded {
    resolved: Resolved,
    meta: CheckpointMeta,
    model: StarModel,
    store: ParamStore<f32>,
    ds: Dataset,
    emb: SemanticEmbeddingSet,
}

/// Load a checkpoint and the data it is evaluated on. Model keys of the run
/// configuration are ignored: the checkpoint records its own.
fn load_checkpoint(file: Option<&Path>, run: RunConfig, dir: &Path) -> Result<Loaded> {
    let resolved = resolve(file, run)?;
    let (meta, model, store) = checkpoint::load(dir)?;
    let (ds, emb) = load_data(&resolved, meta.model.partition)?;
    checkpoint::check_compatible(&meta, &ds, &emb)?;
    Ok(Loaded { resolved, meta, model, store, ds, emb })
}

impl Loaded {
    fn out(&self, checkpoint: &Path, sub: &str) -> PathBuf {
        self.resolved.out.clone().unwrap_or_else(|| checkpoint.join(sub))
    }

    fn table(&self) -> Result<eval::ScoreTable> {
        let inputs = self.model.prepare(&self.store, &self.ds)?;
        Ok(eval::score_table(&self.model, &self.store, &self.ds, &inputs, &self.emb)?)
    }
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let l = load_checkpoint(a.config.as_deref(), a.run, &a.checkpoint)?;
    let gamma = match (a.mode, a.gamma) {
        (Mode::Zsl, Some(g)) => {
            eprintln!("warning: --gamma {g} is ignored in zsl mode");
            0.0
        }
        (_, g) => g.unwrap_or(0.0),
    };
    let report = eval::evaluate(&l.table()?, &l.ds.split, a.mode, gamma)?;
    let out = l.out(&a.checkpoint, "eval");
    eval::write_report(&out, &report)?;
    l.resolved.write_echo(&out, "eval.toml")?;
    println!("{}", report.summary());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let l = load_checkpoint(a.config.as_deref(), a.run, &a.checkpoint)?;
    let table = l.table()?;
    let gammas = match a.gamma_list {
        Some(list) => list,
        None => eval::default_gammas(&table, &l.ds.split, a.points),
    };
    let result = eval::gamma_sweep(&table, &l.ds.split, &gammas)?;
    let out = l.out(&a.checkpoint, "sweep");
    eval::write_sweep(&out, &result)?;
    l.resolved.write_echo(&out, "sweep.toml")?;
    let best = result.best_point();
    println!(
        "mode gzsl  points {}  gamma {}  S {}  U {}  H {}",
        result.points.len(),
        best.gamma,
        best.seen,
        best.unseen,
        best.harmonic
    );
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let l = load_checkpoint(a.config.as_deref(), a.run, &a.checkpoint)?;
    let inputs = l.model.prepare(&l.store, &l.ds)?;
    let out = l.out(&a.checkpoint, "dump");
    let index = eval::dump_embeddings(&out, &l.model, &l.store, &l.ds, &inputs, &l.emb)?;
    l.resolved.write_echo(&out, "dump.toml")?;
    println!(
        "dumped {} test samples and {} categories (epoch {}) to {}",
        index.samples.len(),
        index.categories.len(),
        l.meta.epoch,
        out.display()
    );
    Ok(())
}
