use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use avdn_core::agents::{train_with_progress, LossWeights, ModelConfig, NetworkPolicy, Policy, TrainConfig};
use avdn_core::dataset::{generate_episodes, load_episodes, save_episodes, AugmentConfig, CorpusStats, Episode, GeneratorConfig};
use avdn_core::fusion::Ensemble;
use avdn_core::metrics::{evaluate_split, format_table, GpMode, MetricConfig, MetricReport};
use avdn_core::nn::{AgentKind, Checkpoint};
use avdn_core::simulator::{
    checkpoint_label, load_predictions, overfit_report, prediction_map, run_split, save_predictions, Autopilot,
    RolloutConfig, SessionConfig, SessionRegistry,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::server::{router, AppState};

/// Desk-scale aerial vision-and-dialog navigation toolkit.
///
/// Every command is a pure function of its flags and input files: rerunning
/// with the same flags (including --seed) rewrites byte-identical outputs.
/// Any flag may also come from an environment variable named AVDN_ followed
/// by the flag name in upper case with dashes as underscores, e.g.
/// AVDN_SEED=7 or AVDN_IOU_THRESHOLD=0.5.
#[derive(Debug, Parser)]
#[command(name = "avdn", version, verbatim_doc_comment)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic episodes as JSON lines and print corpus statistics.
    Generate(GenerateArgs),
    /// Train a policy with teacher forcing and write checkpoints.
    Train(TrainArgs),
    /// Roll out one checkpoint over a dataset and write predictions.
    Eval(EvalArgs),
    /// Roll out an output-averaging ensemble and write predictions.
    Fuse(FuseArgs),
    /// Score prediction files against a dataset (SPL, SR, GP).
    Score(ScoreArgs),
    /// Checkpoint ablation: metrics and train/val losses per checkpoint.
    Report(ReportArgs),
    /// Serve interactive sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, env = "AVDN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "AVDN_COUNT", default_value_t = 100)]
    pub count: usize,
    /// Output JSON-lines file.
    #[arg(long, env = "AVDN_OUT")]
    pub out: PathBuf,
    /// Maximum time steps M (also the number of dialog rounds).
    #[arg(long, env = "AVDN_MAX_STEPS", default_value_t = 2)]
    pub max_steps: usize,
    #[arg(long, env = "AVDN_WORLD_SIDE", default_value_t = 300.0)]
    pub world_side: f64,
    #[arg(long, env = "AVDN_VIEW_SIDE", default_value_t = 50.0)]
    pub view_side: f64,
    #[arg(long, env = "AVDN_STEP_MAX", default_value_t = 50.0)]
    pub step_max: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, env = "AVDN_D_MODEL", default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, env = "AVDN_HEADS", default_value_t = 4)]
    pub heads: usize,
    #[arg(long, env = "AVDN_LAYERS", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, env = "AVDN_FF_HIDDEN", default_value_t = 64)]
    pub ff_hidden: usize,
    #[arg(long, env = "AVDN_LSTM_HIDDEN", default_value_t = 32)]
    pub lstm_hidden: usize,
    /// Observation raster side in pixels.
    #[arg(long, env = "AVDN_RESOLUTION", default_value_t = 16)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// transformer or lstm
    #[arg(long, env = "AVDN_KIND")]
    pub kind: AgentKind,
    /// Training episodes (JSON lines).
    #[arg(long, env = "AVDN_DATA")]
    pub data: PathBuf,
    /// Validation episodes for the loss log.
    #[arg(long, env = "AVDN_VAL")]
    pub val: Option<PathBuf>,
    #[arg(long, env = "AVDN_ITERS", default_value_t = 0)]
    pub iters: u64,
    /// Comma-separated iteration marks; defaults to the last iteration.
    #[arg(long, env = "AVDN_CHECKPOINTS", value_delimiter = ',')]
    pub checkpoints: Vec<u64>,
    #[arg(long, env = "AVDN_BATCH_SIZE", default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, env = "AVDN_LR", default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, env = "AVDN_WEIGHT_DECAY", default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, env = "AVDN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Disable blur/noise augmentation.
    #[arg(long, env = "AVDN_NO_AUGMENT")]
    pub no_augment: bool,
    /// Output directory for checkpoints and the loss log.
    #[arg(long, env = "AVDN_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Override the per-episode step limit M.
    #[arg(long, env = "AVDN_MAX_STEPS")]
    pub max_steps: Option<usize>,
    #[arg(long, env = "AVDN_STEP_MAX", default_value_t = 50.0)]
    pub step_max: f64,
    #[arg(long, env = "AVDN_STOP_THRESHOLD", default_value_t = 0.5)]
    pub stop_threshold: f64,
}

impl RolloutArgs {
    fn config(&self) -> RolloutConfig {
        RolloutConfig {
            max_steps: self.max_steps,
            step_max: self.step_max,
            stop_threshold: self.stop_threshold,
            ..RolloutConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "AVDN_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "AVDN_DATA")]
    pub data: PathBuf,
    /// Output predictions (JSON lines).
    #[arg(long, env = "AVDN_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub rollout: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Ensemble manifest: one `<kind> <checkpoint path>` per line.
    #[arg(long, env = "AVDN_MANIFEST", conflicts_with = "checkpoint")]
    pub manifest: Option<PathBuf>,
    /// Member checkpoints (repeat the flag, at least two).
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, env = "AVDN_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "AVDN_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub rollout: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, env = "AVDN_IOU_THRESHOLD", default_value_t = 0.4)]
    pub iou_threshold: f64,
    /// path-literal or displacement
    #[arg(long, env = "AVDN_GP_MODE", default_value = "path-literal")]
    pub gp_mode: GpMode,
}

impl MetricArgs {
    fn config(&self) -> Result<MetricConfig> {
        Ok(MetricConfig::new(self.iou_threshold, self.gp_mode)?)
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, env = "AVDN_DATA")]
    pub data: PathBuf,
    /// Prediction files (repeat the flag); one table row each.
    #[arg(long, required = true)]
    pub predictions: Vec<PathBuf>,
    /// Row labels, one per prediction file; defaults to the file stems.
    #[arg(long)]
    pub label: Vec<String>,
    /// Machine-readable report (JSON).
    #[arg(long, env = "AVDN_OUT")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Checkpoints to compare (repeat the flag).
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, env = "AVDN_VAL")]
    pub val: PathBuf,
    /// Training split, for the train-loss column.
    #[arg(long, env = "AVDN_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "AVDN_OUT")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub rollout: RolloutArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "AVDN_HOST", default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on startup.
    #[arg(long, env = "AVDN_PORT", default_value_t = 8080)]
    pub port: u16,
    /// First generator seed for sessions created without a body.
    #[arg(long, env = "AVDN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory for append-only session transcripts.
    #[arg(long, env = "AVDN_TRANSCRIPTS")]
    pub transcripts: Option<PathBuf>,
    #[arg(long, env = "AVDN_CAPACITY", default_value_t = 64)]
    pub capacity: usize,
    /// Moves the autopilot may make per instruction.
    #[arg(long, env = "AVDN_STEPS_PER_ROUND", default_value_t = 1)]
    pub steps_per_round: usize,
    #[arg(long, env = "AVDN_IOU_THRESHOLD", default_value_t = 0.4)]
    pub iou_threshold: f64,
    /// Fly with a trained checkpoint instead of the goal-seeking oracle.
    #[arg(long, env = "AVDN_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
}

/// One row of a `score` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    pub report: MetricReport,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse(a),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn load(path: &Path) -> Result<Vec<Episode>> {
    load_episodes(path).with_context(|| format!("reading episodes from {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        world_side: a.world_side,
        view_side: a.view_side,
        step_max: a.step_max,
        max_steps: a.max_steps,
        ..GeneratorConfig::default()
    };
    let episodes = generate_episodes(a.seed, a.count, &cfg)?;
    save_episodes(&episodes, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let s = CorpusStats::from_episodes(&episodes);
    println!("episodes             {}", s.episodes);
    println!("instructions         {}", s.instructions);
    println!("egocentric fraction  {:.4}", s.egocentric_fraction);
    println!("allocentric fraction {:.4}", s.allocentric_fraction);
    println!("mixed fraction       {:.4}", s.mixed_fraction);
    println!("mean path length     {:.2} m", s.mean_path_length);
    println!("mean dialog rounds   {:.2}", s.mean_rounds);
    Ok(())
}

fn checkpoint_path(dir: &Path, kind: AgentKind, iteration: u64) -> PathBuf {
    dir.join(format!("{kind}-{iteration}.ckpt"))
}

fn train(a: TrainArgs) -> Result<()> {
    let train_split = load(&a.data)?;
    let val_split = match &a.val {
        Some(p) => load(p)?,
        None => Vec::new(),
    };
    let model = ModelConfig {
        d_model: a.model.d_model,
        n_heads: a.model.heads,
        n_layers: a.model.layers,
        ff_hidden: a.model.ff_hidden,
        lstm_hidden: a.model.lstm_hidden,
        resolution: a.model.resolution,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        total_iterations: a.iters,
        checkpoint_iterations: a.checkpoints.clone(),
        loss_weights: LossWeights::default(),
        seed: a.seed,
        augment: if a.no_augment { AugmentConfig::none() } else { AugmentConfig::default() },
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join(format!("{}-losses.jsonl", a.kind));
    let mut log = std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut io_error = None;
    let outcome = train_with_progress(a.kind, &train_split, &val_split, &model, &cfg, &mut |r| {
        match r.val_loss {
            Some(v) => println!("iteration {:>7}  train_loss {:.6}  val_loss {:.6}", r.iteration, r.train_loss, v),
            None => println!("iteration {:>7}  train_loss {:.6}", r.iteration, r.train_loss),
        }
        if let Err(e) = serde_json::to_writer(&mut log, r).map_err(std::io::Error::from).and_then(|_| log.write_all(b"\n")) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    for ck in &outcome.checkpoints {
        let path = checkpoint_path(&a.out, a.kind, ck.iteration);
        ck.save(&path)?;
        println!("wrote {} ({})", path.display(), checkpoint_label(a.kind, ck.iteration));
    }
    Ok(())
}

fn rollout(policy: &dyn Policy, data: &Path, cfg: &RolloutConfig, out: &Path) -> Result<()> {
    let episodes = load(data)?;
    let preds = run_split(policy, &episodes, cfg)?;
    save_predictions(&preds, out).with_context(|| format!("writing {}", out.display()))?;
    let stopped = preds
        .iter()
        .filter(|p| p.stop_reason == avdn_core::simulator::StopReason::Stopped)
        .count();
    println!("{} episodes rolled out ({stopped} stopped by the policy) -> {}", preds.len(), out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let policy = NetworkPolicy::from_checkpoint(ck).with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    rollout(&policy, &a.data, &a.rollout.config(), &a.out)
}

fn fuse(a: FuseArgs) -> Result<()> {
    let ensemble = match &a.manifest {
        Some(m) => Ensemble::load_manifest(m).with_context(|| format!("manifest {}", m.display()))?,
        None => {
            if a.checkpoint.len() < 2 {
                bail!("fuse needs --manifest or at least two --checkpoint flags");
            }
            let members = a
                .checkpoint
                .iter()
                .map(|p| {
                    NetworkPolicy::from_checkpoint(load_checkpoint(p)?)
                        .with_context(|| format!("checkpoint {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ensemble::new(members)?
        }
    };
    rollout(&ensemble, &a.data, &a.rollout.config(), &a.out)
}

fn score(a: ScoreArgs) -> Result<()> {
    if !a.label.is_empty() && a.label.len() != a.predictions.len() {
        bail!("{} labels given for {} prediction files", a.label.len(), a.predictions.len());
    }
    let cfg = a.metrics.config()?;
    let episodes = load(&a.data)?;
    let known: BTreeSet<&str> = episodes.iter().map(|e| e.id.as_str()).collect();
    let mut rows = Vec::with_capacity(a.predictions.len());
    for (i, path) in a.predictions.iter().enumerate() {
        let preds = load_predictions(path).with_context(|| format!("reading predictions {}", path.display()))?;
        if let Some(p) = preds.iter().find(|p| !known.contains(p.episode_id.as_str())) {
            bail!("{}: prediction for unknown episode `{}`", path.display(), p.episode_id);
        }
        let report = evaluate_split(&episodes, &prediction_map(&preds)?, &cfg)
            .with_context(|| format!("scoring {}", path.display()))?;
        let label = match a.label.get(i) {
            Some(l) => l.clone(),
            None => path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
        };
        rows.push(ScoreRow { label, report });
    }
    let table: Vec<(String, &MetricReport)> = rows.iter().map(|r| (r.label.clone(), &r.report)).collect();
    print!("{}", format_table(&table));
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_vec_pretty(&rows)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let val = load(&a.val)?;
    let train = match &a.data {
        Some(p) => Some(load(p)?),
        None => None,
    };
    let rep = overfit_report(
        &a.checkpoint,
        train.as_deref(),
        &val,
        &a.rollout.config(),
        &a.metrics.config()?,
        &LossWeights::default(),
    )?;
    print!("{}", rep.table());
    println!();
    print!("{}", rep.loss_table());
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_vec_pretty(&rep)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let autopilot = match &a.checkpoint {
        Some(p) => Autopilot::Network(Arc::new(
            NetworkPolicy::from_checkpoint(load_checkpoint(p)?).with_context(|| format!("checkpoint {}", p.display()))?,
        )),
        None => Autopilot::Oracle,
    };
    if let Some(dir) = &a.transcripts {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let cfg = SessionConfig {
        capacity: a.capacity,
        steps_per_round: a.steps_per_round,
        iou_threshold: a.iou_threshold,
        ..SessionConfig::default()
    };
    let state = Arc::new(AppState::new(SessionRegistry::new(cfg, autopilot), a.transcripts.clone(), a.seed));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
