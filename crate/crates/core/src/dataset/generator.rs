//! Deterministic synthetic episodes shaped like recorded aerial dialogs.
//!
//! Each episode draws a start view and a goal area on a value-noise map, flies
//! the demonstration along the straight line between them in equal steps no
//! longer than `step_max`, and writes one dialog round per step. Instruction
//! styles are drawn so that egocentric and allocentric phrasing appear at the
//! configured marginal rates; when the two rates sum above one, the excess is
//! the share of mixed instructions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::phrases::{self, ALLOCENTRIC_MARKERS, EGOCENTRIC_MARKERS};
use super::{goal_overlap_mask, DialogRound, Episode, InstructionStyle, ValueNoise};
use crate::error::{Error, Result};
use crate::geometry::{distance, path_length, Trajectory, ViewArea};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub world_side: f64,
    pub view_side: f64,
    pub step_max: f64,
    pub max_steps: usize,
    pub patch_grid: usize,
    pub max_retries: usize,
    pub egocentric_rate: f64,
    pub allocentric_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            world_side: 300.0,
            view_side: 50.0,
            step_max: 50.0,
            max_steps: 2,
            patch_grid: 4,
            max_retries: 64,
            egocentric_rate: 0.82,
            allocentric_rate: 0.30,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.world_side > 0.0) {
            return Err(Error::Invalid("world_side must be positive".into()));
        }
        if !(self.view_side > 0.0) || self.view_side * std::f64::consts::SQRT_2 >= self.world_side {
            return Err(Error::Invalid("view_side must be positive and fit inside the world".into()));
        }
        if !(self.step_max > 0.0) {
            return Err(Error::Invalid("step_max must be positive".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Invalid("max_steps must be at least 1".into()));
        }
        if self.patch_grid == 0 {
            return Err(Error::Invalid("patch_grid must be positive".into()));
        }
        let (e, a) = (self.egocentric_rate, self.allocentric_rate);
        if !(0.0..=1.0).contains(&e) || !(0.0..=1.0).contains(&a) || e + a < 1.0 {
            return Err(Error::Invalid(
                "style rates must lie in [0, 1] and sum to at least 1".into(),
            ));
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        self.view_side * std::f64::consts::FRAC_1_SQRT_2
    }
}

fn draw_style(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> InstructionStyle {
    let mixed = cfg.egocentric_rate + cfg.allocentric_rate - 1.0;
    let u: f64 = rng.gen();
    if u < mixed {
        InstructionStyle::Mixed
    } else if u < cfg.egocentric_rate {
        InstructionStyle::Egocentric
    } else {
        InstructionStyle::Allocentric
    }
}

fn compose_instruction(
    style: InstructionStyle,
    heading: f64,
    direction: f64,
    step_length: f64,
    last: Option<f64>,
) -> String {
    let ego = phrases::egocentric_phrase(phrases::relative_bearing(heading, direction));
    let allo = phrases::allocentric_phrase(direction);
    let mut text = match style {
        InstructionStyle::Egocentric => ego.to_string(),
        InstructionStyle::Allocentric => allo.to_string(),
        InstructionStyle::Mixed => format!("{ego} and {allo}"),
    };
    text.push_str(" and ");
    text.push_str(&phrases::distance_phrase(step_length));
    if let Some(brightness) = last {
        text.push_str(" then stop above it ");
        text.push_str(phrases::goal_descriptor(brightness));
    }
    text
}

/// Builds one episode; `(seed, cfg)` determines every field.
pub fn generate_episode(seed: u64, cfg: &GeneratorConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map_seed: u64 = rng.gen();
    let lo = cfg.margin();
    let hi = cfg.world_side - cfg.margin();
    let start_direction = rng.gen_range(0.0..TAU);
    let start_view = ViewArea::new(
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        cfg.view_side,
        start_direction,
    )?;
    let reach = cfg.max_steps as f64 * cfg.step_max;

    let mut goal = None;
    for _ in 0..cfg.max_retries.max(1) {
        let candidate = ViewArea::new(
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            cfg.view_side,
            rng.gen_range(0.0..TAU),
        )?;
        if distance(start_view.center(), candidate.center()) <= reach {
            goal = Some(candidate);
            break;
        }
    }
    let goal = goal.ok_or_else(|| Error::Generation {
        attempts: cfg.max_retries.max(1),
        reason: format!("no goal within {reach} m of the start"),
    })?;
    demonstrate(format!("ep-{seed:016x}"), map_seed, start_view, goal, cfg, &mut rng)
}

/// Episode with a fixed start and goal; the map seed and dialog draws come
/// from `seed`.
pub fn episode_between(seed: u64, start_view: ViewArea, goal: ViewArea, cfg: &GeneratorConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map_seed: u64 = rng.gen();
    demonstrate(format!("ep-{seed:016x}"), map_seed, start_view, goal, cfg, &mut rng)
}

fn demonstrate(
    id: String,
    map_seed: u64,
    start_view: ViewArea,
    goal: ViewArea,
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let map = ValueNoise::new(map_seed, cfg.world_side);
    let total = distance(start_view.center(), goal.center());
    let moves = if total < 1e-9 {
        0
    } else {
        ((total / cfg.step_max).ceil() as usize).max(1)
    };
    let heading_to_goal = (goal.center_y - start_view.center_y).atan2(goal.center_x - start_view.center_x);

    let mut views = vec![start_view];
    for k in 1..=moves {
        let t = k as f64 / moves as f64;
        let x = start_view.center_x + t * (goal.center_x - start_view.center_x);
        let y = start_view.center_y + t * (goal.center_y - start_view.center_y);
        let (x, y) = if k == moves { goal.center() } else { (x, y) };
        views.push(ViewArea::new(x, y, cfg.view_side, heading_to_goal)?);
    }

    let mut dialog = Vec::with_capacity(moves.max(1));
    if moves == 0 {
        dialog.push(DialogRound {
            question: None,
            instruction: "stay here you are already over the destination".into(),
            style: InstructionStyle::Egocentric,
        });
    }
    for k in 0..moves {
        let style = draw_style(rng, cfg);
        let question = (k > 0).then(|| phrases::QUESTIONS[rng.gen_range(0..phrases::QUESTIONS.len())].to_string());
        let last = (k + 1 == moves).then(|| map.sample(goal.center_x, goal.center_y));
        dialog.push(DialogRound {
            question,
            instruction: compose_instruction(style, views[k].rotation, heading_to_goal, total / moves as f64, last),
            style,
        });
    }

    let gt_attention = views
        .iter()
        .map(|v| goal_overlap_mask(v, &goal, cfg.patch_grid))
        .collect();

    let episode = Episode {
        id,
        map_seed,
        world_side: cfg.world_side,
        start_view,
        start_direction: start_view.rotation,
        goal,
        max_steps: cfg.max_steps,
        dialog,
        gt_trajectory: Trajectory::new(views)?,
        gt_attention,
    };
    episode
        .validate()
        .map_err(|(field, msg)| Error::Invalid(format!("generated episode field `{field}`: {msg}")))?;
    Ok(episode)
}

fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.gen()
}

/// `count` episodes whose per-episode seeds are derived from `seed`.
pub fn generate_episodes(seed: u64, count: usize, cfg: &GeneratorConfig) -> Result<Vec<Episode>> {
    (0..count as u64)
        .map(|i| generate_episode(derive_seed(seed, i), cfg))
        .collect()
}

/// Corpus summary printed by the `generate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub episodes: usize,
    pub instructions: usize,
    pub egocentric_fraction: f64,
    pub allocentric_fraction: f64,
    pub mixed_fraction: f64,
    pub mean_path_length: f64,
    pub mean_rounds: f64,
}

impl CorpusStats {
    /// Style fractions are measured on the instruction text, not the labels.
    pub fn from_episodes(episodes: &[Episode]) -> Self {
        let instructions: Vec<&str> = episodes
            .iter()
            .flat_map(|e| e.dialog.iter().map(|r| r.instruction.as_str()))
            .collect();
        let n = instructions.len().max(1) as f64;
        let ego = instructions
            .iter()
            .filter(|t| phrases::contains_phrase(t, EGOCENTRIC_MARKERS))
            .count();
        let allo = instructions
            .iter()
            .filter(|t| phrases::contains_phrase(t, ALLOCENTRIC_MARKERS))
            .count();
        let both = instructions
            .iter()
            .filter(|t| {
                phrases::contains_phrase(t, EGOCENTRIC_MARKERS) && phrases::contains_phrase(t, ALLOCENTRIC_MARKERS)
            })
            .count();
        let m = episodes.len().max(1) as f64;
        Self {
            episodes: episodes.len(),
            instructions: instructions.len(),
            egocentric_fraction: ego as f64 / n,
            allocentric_fraction: allo as f64 / n,
            mixed_fraction: both as f64 / n,
            mean_path_length: episodes.iter().map(|e| path_length(&e.gt_trajectory)).sum::<f64>() / m,
            mean_rounds: episodes.iter().map(|e| e.dialog.len()).sum::<usize>() as f64 / m,
        }
    }
}
