//! Navigation metrics: success, success rate (SR), success weighted by path
//! length (SPL) and goal progress (GP).
//!
//! SR and SPL are reported in percent; GP in meters. Per-episode quantities:
//! `S` success flag, `l` demonstration (shortest) path length, `p` taken path
//! length, and `SPL = 100/N · Σ S·l / max(p, l)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::geometry::{distance, iou, path_length, Trajectory, ViewArea};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// Trajectory length minus remaining distance to the goal center.
    #[default]
    PathLiteral,
    /// Start-to-goal distance minus remaining distance to the goal center.
    Displacement,
}

impl std::str::FromStr for GpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path-literal" | "path_literal" => Ok(Self::PathLiteral),
            "displacement" => Ok(Self::Displacement),
            other => Err(Error::Invalid(format!("unknown GP mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub iou_threshold: f64,
    pub gp_mode: GpMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.4,
            gp_mode: GpMode::PathLiteral,
        }
    }
}

impl MetricConfig {
    pub fn new(iou_threshold: f64, gp_mode: GpMode) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::Invalid(format!(
                "iou threshold must lie in (0, 1], got {iou_threshold}"
            )));
        }
        Ok(Self {
            iou_threshold,
            gp_mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub success: bool,
    pub shortest_length: f64,
    pub taken_length: f64,
    pub goal_progress: f64,
    pub final_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub spl: f64,
    pub sr: f64,
    pub gp: f64,
    pub per_episode: Vec<EpisodeResult>,
    pub config: MetricConfig,
}

pub fn success(final_view: &ViewArea, goal: &ViewArea, cfg: &MetricConfig) -> bool {
    iou(final_view, goal) >= cfg.iou_threshold
}

pub fn success_rate(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("success rate of zero episodes".into()));
    }
    let hits = results.iter().filter(|r| r.success).count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

pub fn spl(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("SPL of zero episodes".into()));
    }
    let mut total = 0.0;
    for r in results {
        if r.shortest_length < 0.0 || r.taken_length < 0.0 {
            return Err(Error::Invalid(format!(
                "episode `{}` has a negative path length",
                r.episode_id
            )));
        }
        if !r.success {
            continue;
        }
        let denom = r.taken_length.max(r.shortest_length);
        if denom <= 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "episode `{}` succeeded with zero shortest and taken length",
                r.episode_id
            )));
        }
        total += r.shortest_length / denom;
    }
    Ok(100.0 * total / results.len() as f64)
}

pub fn goal_progress(traj: &Trajectory, goal: &ViewArea, cfg: &MetricConfig) -> f64 {
    let remaining = distance(traj.last().center(), goal.center());
    let covered = match cfg.gp_mode {
        GpMode::PathLiteral => path_length(traj),
        GpMode::Displacement => distance(traj.start().center(), goal.center()),
    };
    covered - remaining
}

pub fn evaluate_episode(episode: &Episode, prediction: &Trajectory, cfg: &MetricConfig) -> EpisodeResult {
    let final_iou = iou(prediction.last(), &episode.goal);
    EpisodeResult {
        episode_id: episode.id.clone(),
        success: final_iou >= cfg.iou_threshold,
        shortest_length: path_length(&episode.gt_trajectory),
        taken_length: path_length(prediction),
        goal_progress: goal_progress(prediction, &episode.goal, cfg),
        final_iou,
    }
}

/// Scores every episode against its prediction, in episode order.
pub fn evaluate_split(
    episodes: &[Episode],
    predictions: &BTreeMap<String, Trajectory>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let per_episode = episodes
        .iter()
        .map(|e| {
            predictions
                .get(&e.id)
                .map(|t| evaluate_episode(e, t, cfg))
                .ok_or_else(|| Error::MissingPrediction(e.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let gp = per_episode.iter().map(|r| r.goal_progress).sum::<f64>() / per_episode.len().max(1) as f64;
    Ok(MetricReport {
        spl: spl(&per_episode)?,
        sr: success_rate(&per_episode)?,
        gp,
        per_episode,
        config: *cfg,
    })
}

/// Plain-text table with the columns `Method SPL SR GP`.
pub fn format_table(rows: &[(String, &MetricReport)]) -> String {
    let width = rows
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}", "Method", "SPL", "SR", "GP");
    for (label, r) in rows {
        let _ = writeln!(out, "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}", label, r.spl, r.sr, r.gp);
    }
    out
}
