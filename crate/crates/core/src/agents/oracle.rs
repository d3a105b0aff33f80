use super::{AgentOutput, AgentState, Policy};
use crate::dataset::goal_overlap_mask;
use crate::error::Result;
use crate::geometry::{iou, ViewArea};

/// Scripted policy that knows the goal: flies straight at its center in
/// moves of at most `step_max` and stops once the IoU requirement holds.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub goal: ViewArea,
    pub step_max: f64,
    pub iou_threshold: f64,
    pub patch_grid: usize,
    pub resolution: usize,
}

impl OraclePolicy {
    pub fn new(goal: ViewArea, step_max: f64) -> Self {
        Self {
            goal,
            step_max,
            iou_threshold: 0.4,
            patch_grid: 4,
            resolution: 16,
        }
    }
}

pub fn oracle_output(view: &ViewArea, goal: &ViewArea, step_max: f64, iou_threshold: f64, grid: usize) -> AgentOutput {
    let dx = goal.center_x - view.center_x;
    let dy = goal.center_y - view.center_y;
    let d = dx.hypot(dy);
    let scale = if d > step_max { step_max / d } else { 1.0 };
    let stop = if iou(view, goal) >= iou_threshold { 1.0 } else { 0.0 };
    AgentOutput::from_world_delta(view, (dx * scale, dy * scale), stop, goal_overlap_mask(view, goal, grid))
}

impl Policy for OraclePolicy {
    fn act(&self, state: &AgentState) -> Result<AgentOutput> {
        Ok(oracle_output(
            &state.current_view,
            &self.goal,
            self.step_max,
            self.iou_threshold,
            self.patch_grid,
        ))
    }

    fn resolution(&self) -> usize {
        self.resolution
    }

    fn patch_grid(&self) -> usize {
        self.patch_grid
    }
}
