//! Episodes: schema, synthetic generation, augmentation, persistence and
//! splits.

mod augment;
mod generator;
mod io;
mod noise;
pub mod phrases;
mod raster;
mod split;

pub use augment::{augment, flip_horizontal, flip_vertical, AugmentConfig};
pub use generator::{episode_between, generate_episode, generate_episodes, CorpusStats, GeneratorConfig};
pub use io::{load_episodes, read_episodes, save_episodes, write_episodes, SCHEMA_VERSION};
pub use noise::ValueNoise;
pub use raster::{goal_overlap_mask, rasterize_observation, view_inside_world};
pub use split::split_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Trajectory, ViewArea};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionStyle {
    Egocentric,
    Allocentric,
    Mixed,
}

impl InstructionStyle {
    pub fn is_egocentric(self) -> bool {
        matches!(self, Self::Egocentric | Self::Mixed)
    }

    pub fn is_allocentric(self) -> bool {
        matches!(self, Self::Allocentric | Self::Mixed)
    }
}

/// One exchange: an optional follower question and the commander's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRound {
    pub question: Option<String>,
    pub instruction: String,
    pub style: InstructionStyle,
}

/// Per-patch human attention over a `P×P` grid, row 0 at the far (forward)
/// edge of the view and column 0 at its left edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AttentionMask {
    size: usize,
    grid: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for AttentionMask {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Invalid("attention mask must be square".into()));
        }
        AttentionMask::new(size, rows.into_iter().flatten().collect())
    }
}

impl From<AttentionMask> for Vec<Vec<f64>> {
    fn from(m: AttentionMask) -> Self {
        m.grid.chunks(m.size.max(1)).map(<[f64]>::to_vec).collect()
    }
}

impl AttentionMask {
    pub fn new(size: usize, grid: Vec<f64>) -> Result<Self> {
        if size == 0 || grid.len() != size * size {
            return Err(Error::Invalid(format!(
                "attention mask of size {size} needs {} values, got {}",
                size * size,
                grid.len()
            )));
        }
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("attention values must lie in [0, 1]".into()));
        }
        Ok(Self { size, grid })
    }

    pub fn filled(size: usize, value: f64) -> Self {
        Self::new(size, vec![value; size * size]).expect("constant mask in range")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.size + col]
    }
}

/// Rasterized ground image under a view plus the drone heading.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub direction: (f64, f64),
}

impl Observation {
    pub fn new(size: usize, pixels: Vec<f64>, direction: (f64, f64)) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "observation {size}x{size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("pixels must lie in [0, 1]".into()));
        }
        let norm = direction.0.hypot(direction.1);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("direction must be a unit vector, norm {norm}")));
        }
        Ok(Self {
            size,
            pixels,
            direction,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// Pixels of patch `(pr, pc)` on a `grid×grid` patch layout, row-major.
    pub fn patch(&self, grid: usize, pr: usize, pc: usize) -> Vec<f64> {
        let cell = self.size / grid;
        let mut out = Vec::with_capacity(cell * cell);
        for r in pr * cell..(pr + 1) * cell {
            out.extend_from_slice(&self.pixels[r * self.size + pc * cell..r * self.size + (pc + 1) * cell]);
        }
        out
    }

    /// Mean pixel value of every patch, row-major over the patch grid.
    pub fn pooled(&self, grid: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid * grid);
        for pr in 0..grid {
            for pc in 0..grid {
                let p = self.patch(grid, pr, pc);
                out.push(p.iter().sum::<f64>() / p.len() as f64);
            }
        }
        out
    }
}

/// A navigation task with its demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub map_seed: u64,
    pub world_side: f64,
    pub start_view: ViewArea,
    pub start_direction: f64,
    pub goal: ViewArea,
    pub max_steps: usize,
    pub dialog: Vec<DialogRound>,
    pub gt_trajectory: Trajectory,
    pub gt_attention: Vec<AttentionMask>,
}

impl Episode {
    pub fn map(&self) -> ValueNoise {
        ValueNoise::new(self.map_seed, self.world_side)
    }

    pub fn patch_grid(&self) -> usize {
        self.gt_attention.first().map_or(4, AttentionMask::size)
    }

    /// Checks every schema invariant; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.id.is_empty() {
            return Err(("id", "must be non-empty".into()));
        }
        if !(self.world_side > 0.0 && self.world_side.is_finite()) {
            return Err(("world_side", "must be positive".into()));
        }
        if self.max_steps < 1 {
            return Err(("max_steps", "must be at least 1".into()));
        }
        if self.dialog.len() > self.max_steps {
            return Err((
                "dialog",
                format!("{} rounds exceed max_steps {}", self.dialog.len(), self.max_steps),
            ));
        }
        if let Some(i) = self.dialog.iter().position(|r| r.instruction.trim().is_empty()) {
            return Err(("dialog", format!("round {i} has an empty instruction")));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.start_direction) {
            return Err(("start_direction", "must lie in [0, 2π)".into()));
        }
        if !view_inside_world(&self.goal, self.world_side) {
            return Err(("goal", "lies outside the world square".into()));
        }
        if !view_inside_world(&self.start_view, self.world_side) {
            return Err(("start_view", "lies outside the world square".into()));
        }
        let views = self.gt_trajectory.views();
        if views[0] != self.start_view {
            return Err(("gt_trajectory", "first view must equal start_view".into()));
        }
        if let Some(i) = views.iter().position(|v| !view_inside_world(v, self.world_side)) {
            return Err(("gt_trajectory", format!("view {i} lies outside the world square")));
        }
        if self.gt_attention.len() != views.len() {
            return Err((
                "gt_attention",
                format!("{} masks for {} trajectory views", self.gt_attention.len(), views.len()),
            ));
        }
        let p = self.patch_grid();
        if self.gt_attention.iter().any(|m| m.size() != p) {
            return Err(("gt_attention", "masks must share one grid size".into()));
        }
        Ok(())
    }
}
