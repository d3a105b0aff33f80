//! Closed-loop rollouts, prediction files, the checkpoint-ablation report and
//! interactive sessions.

mod session;

pub use session::{
    classify_style, Autopilot, EpisodeStub, SessionConfig, SessionEvent, SessionPhase, SessionRegistry,
    SessionSnapshot, SessionSource, SessionState,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{dataset_loss, training_samples, AgentOutput, AgentState, NetworkPolicy, Policy, Vocabulary};
use crate::agents::LossWeights;
use crate::dataset::{AttentionMask, Episode};
use crate::error::{Error, Result};
use crate::geometry::{Trajectory, ViewArea};
use crate::metrics::{evaluate_split, format_table, MetricConfig, MetricReport};
use crate::nn::{AgentKind, Checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Overrides the episode's `max_steps` when set.
    pub max_steps: Option<usize>,
    pub step_max: f64,
    pub stop_threshold: f64,
    pub record_attention: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_steps: None,
            step_max: 50.0,
            stop_threshold: 0.5,
            record_attention: true,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_max > 0.0 && self.step_max.is_finite()) {
            return Err(Error::Invalid("rollout step_max must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stop_threshold) {
            return Err(Error::Invalid("stop threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stopped,
    MaxSteps,
}

/// Policy output behind one movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub next_center: (f64, f64),
    pub next_rotation: f64,
    pub stop_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub episode_id: String,
    pub trajectory: Trajectory,
    pub log: Vec<StepRecord>,
    pub stop_reason: StopReason,
}

/// Applies a policy move: the step is shortened to `step_max` and the
/// center kept far enough from the border for any yaw.
pub fn apply_move(view: &ViewArea, out: &AgentOutput, step_max: f64, world_side: f64) -> Result<ViewArea> {
    let mut dx = out.next_center.0 - view.center_x;
    let mut dy = out.next_center.1 - view.center_y;
    let d = dx.hypot(dy);
    if d > step_max {
        dx *= step_max / d;
        dy *= step_max / d;
    }
    let lo = view.half_diagonal();
    let hi = world_side - lo;
    let x = (view.center_x + dx).clamp(lo, hi);
    let y = (view.center_y + dy).clamp(lo, hi);
    view.moved_to(x, y, out.next_rotation)
}

/// Rolls `policy` out on `episode`. Round `t` of the dialog becomes visible
/// at step `t`; the loop ends when the policy stops or after `M` moves.
pub fn run_episode(policy: &dyn Policy, episode: &Episode, cfg: &RolloutConfig) -> Result<PredictedTrajectory> {
    cfg.validate()?;
    let vocab = Vocabulary::default();
    let m = cfg.max_steps.unwrap_or(episode.max_steps);
    let mut views = vec![episode.start_view];
    let mut log = Vec::new();
    let mut stop_reason = StopReason::MaxSteps;
    while log.len() < m {
        let step = views.len() - 1;
        let at = |e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        let state = AgentState::from_views(episode, &episode.dialog, &views, &vocab, policy.resolution()).map_err(at)?;
        let out = policy.act(&state).map_err(at)?;
        out.validate().map_err(at)?;
        if out.stop_prob >= cfg.stop_threshold {
            stop_reason = StopReason::Stopped;
            break;
        }
        let next = apply_move(&views[step], &out, cfg.step_max, episode.world_side).map_err(at)?;
        views.push(next);
        log.push(StepRecord {
            next_center: out.next_center,
            next_rotation: out.next_rotation,
            stop_prob: out.stop_prob,
            attention: cfg.record_attention.then_some(out.attention),
        });
    }
    Ok(PredictedTrajectory {
        episode_id: episode.id.clone(),
        trajectory: Trajectory::new(views)?,
        log,
        stop_reason,
    })
}

/// Rolls out every episode, spreading episodes over threads; the result
/// keeps episode order.
pub fn run_split(policy: &dyn Policy, episodes: &[Episode], cfg: &RolloutConfig) -> Result<Vec<PredictedTrajectory>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(episodes.len().max(1));
    if threads <= 1 {
        return episodes.iter().map(|e| run_episode(policy, e, cfg)).collect();
    }
    let chunk = episodes.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = episodes
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|e| run_episode(policy, e, cfg)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(episodes.len());
        for h in handles {
            out.extend(h.join().expect("rollout thread panicked")?);
        }
        Ok(out)
    })
}

pub fn write_predictions<W: Write>(mut out: W, predictions: &[PredictedTrajectory]) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_predictions(predictions: &[PredictedTrajectory], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_predictions(std::io::BufWriter::new(file), predictions)
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictedTrajectory>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictedTrajectory = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            field: "prediction".into(),
            message: e.to_string(),
        })?;
        if p.log.len() + 1 != p.trajectory.len() {
            return Err(Error::Record {
                line: i + 1,
                field: "log".into(),
                message: format!("{} entries for {} views", p.log.len(), p.trajectory.len()),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictedTrajectory>> {
    read_predictions(std::fs::File::open(path)?)
}

/// Trajectories keyed by episode id. Duplicate ids are an error.
pub fn prediction_map(predictions: &[PredictedTrajectory]) -> Result<BTreeMap<String, Trajectory>> {
    let mut map = BTreeMap::new();
    for p in predictions {
        if map.insert(p.episode_id.clone(), p.trajectory.clone()).is_some() {
            return Err(Error::Invalid(format!("duplicate prediction for episode `{}`", p.episode_id)));
        }
    }
    Ok(map)
}

/// Method label in the style `HAA-Transformer(2000iteration)`.
pub fn checkpoint_label(kind: AgentKind, iteration: u64) -> String {
    let name = match kind {
        AgentKind::Transformer => "HAA-Transformer",
        AgentKind::Lstm => "HAA-LSTM",
    };
    format!("{name}({iteration}iteration)")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub path: PathBuf,
    pub iteration: u64,
    pub metrics: MetricReport,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

impl ReportRow {
    pub fn gap(&self) -> Option<f64> {
        self.train_loss.map(|t| self.val_loss - t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub rows: Vec<ReportRow>,
}

impl OverfitReport {
    /// `Method SPL SR GP` table, one row per checkpoint.
    pub fn table(&self) -> String {
        let rows: Vec<(String, &MetricReport)> = self.rows.iter().map(|r| (r.label.clone(), &r.metrics)).collect();
        format_table(&rows)
    }

    pub fn loss_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Checkpoint".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>10}", "Checkpoint", "TrainLoss", "ValLoss", "Gap");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>10}  {:>10}  {:>10}",
                r.label,
                fmt(r.train_loss),
                fmt(Some(r.val_loss)),
                fmt(r.gap())
            );
        }
        out
    }
}

/// Evaluates each checkpoint on `val` (rollout metrics plus teacher-forced
/// loss) and, when given, its loss on `train`.
pub fn overfit_report(
    checkpoints: &[PathBuf],
    train: Option<&[Episode]>,
    val: &[Episode],
    rollout: &RolloutConfig,
    metrics: &MetricConfig,
    weights: &LossWeights,
) -> Result<OverfitReport> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("at least one checkpoint is required".into()));
    }
    let vocab = Vocabulary::default();
    let mut rows = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let named = |e: Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let ck = Checkpoint::load(path)?;
        let (kind, iteration) = (ck.kind, ck.iteration);
        let policy = NetworkPolicy::from_checkpoint(ck).map_err(named)?;
        let net = policy.network();
        let params = policy.checkpoint().params();
        let val_samples = training_samples(val, policy.config(), &vocab)?;
        let val_loss = dataset_loss(net, params, &val_samples, weights)?;
        let train_loss = match train {
            Some(eps) => Some(dataset_loss(net, params, &training_samples(eps, policy.config(), &vocab)?, weights)?),
            None => None,
        };
        let preds = run_split(&policy, val, rollout)?;
        let report = evaluate_split(val, &prediction_map(&preds)?, metrics)?;
        rows.push(ReportRow {
            label: checkpoint_label(kind, iteration),
            path: path.clone(),
            iteration,
            metrics: report,
            train_loss,
            val_loss,
        });
    }
    Ok(OverfitReport { rows })
}
