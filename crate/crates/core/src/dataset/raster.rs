use super::{AttentionMask, Observation, ValueNoise};
use crate::error::{Error, Result};
use crate::geometry::{intersection_area, view_polygon, Polygon, ViewArea};

const WORLD_EPS: f64 = 1e-9;

/// True when every corner of the view lies in `[0, world_side]²`.
pub fn view_inside_world(view: &ViewArea, world_side: f64) -> bool {
    view_polygon(view).vertices().iter().all(|&(x, y)| {
        x >= -WORLD_EPS && y >= -WORLD_EPS && x <= world_side + WORLD_EPS && y <= world_side + WORLD_EPS
    })
}

/// Samples the ground field on an `resolution×resolution` grid laid out in the
/// view's own frame: row 0 is the forward edge, column 0 the left edge.
pub fn rasterize_observation(map: &ValueNoise, view: &ViewArea, resolution: usize) -> Result<Observation> {
    if resolution == 0 {
        return Err(Error::Invalid("raster resolution must be positive".into()));
    }
    if !view_inside_world(view, map.world_side()) {
        return Err(Error::Invalid(format!(
            "view centered at ({:.3}, {:.3}) lies outside the {} m world",
            view.center_x,
            view.center_y,
            map.world_side()
        )));
    }
    let r = resolution as f64;
    let mut pixels = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let v = (0.5 - (row as f64 + 0.5) / r) * view.side;
        for col in 0..resolution {
            let u = ((col as f64 + 0.5) / r - 0.5) * view.side;
            let (x, y) = view.to_world(u, v);
            pixels.push(map.sample(x, y));
        }
    }
    let direction = (view.rotation.cos(), view.rotation.sin());
    Observation::new(resolution, pixels, direction)
}

/// Corners of patch `(row, col)` of a `grid×grid` subdivision of the view,
/// counter-clockwise.
fn patch_polygon(view: &ViewArea, grid: usize, row: usize, col: usize) -> Polygon {
    let cell = view.side / grid as f64;
    let h = 0.5 * view.side;
    let u0 = -h + col as f64 * cell;
    let u1 = u0 + cell;
    let v1 = h - row as f64 * cell;
    let v0 = v1 - cell;
    let corners = [(u1, v0), (u1, v1), (u0, v1), (u0, v0)]
        .iter()
        .map(|&(u, v)| view.to_world(u, v))
        .collect();
    Polygon::new(corners).expect("patch of a valid view is a convex square")
}

/// 1 for every patch of `view` whose footprint overlaps `goal` with positive
/// area, 0 elsewhere.
pub fn goal_overlap_mask(view: &ViewArea, goal: &ViewArea, grid: usize) -> AttentionMask {
    let goal_poly = view_polygon(goal);
    let cell_area = (view.side / grid as f64).powi(2);
    let mut values = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        for col in 0..grid {
            let overlap = intersection_area(&patch_polygon(view, grid, row, col), &goal_poly);
            values.push(if overlap > 1e-9 * cell_area { 1.0 } else { 0.0 });
        }
    }
    AttentionMask::new(grid, values).expect("binary mask")
}
