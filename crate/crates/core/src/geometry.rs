//! Planar geometry for view areas.
//!
//! A view area is the square patch of ground visible to the drone: a center,
//! a side length and a yaw. Overlap between two views is computed by clipping
//! one convex quadrilateral against the other (Sutherland–Hodgman) and taking
//! the shoelace area of what is left.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Square ground footprint of the drone camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawViewArea")]
pub struct ViewArea {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
    pub rotation: f64,
}

#[derive(Deserialize)]
struct RawViewArea {
    center_x: f64,
    center_y: f64,
    side: f64,
    rotation: f64,
}

impl TryFrom<RawViewArea> for ViewArea {
    type Error = Error;

    fn try_from(raw: RawViewArea) -> Result<Self> {
        ViewArea::new(raw.center_x, raw.center_y, raw.side, raw.rotation)
    }
}

impl ViewArea {
    pub fn new(center_x: f64, center_y: f64, side: f64, rotation: f64) -> Result<Self> {
        if !(center_x.is_finite() && center_y.is_finite() && rotation.is_finite()) {
            return Err(Error::Invalid("view area fields must be finite".into()));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::Invalid(format!("view side must be positive, got {side}")));
        }
        Ok(Self {
            center_x,
            center_y,
            side,
            rotation: normalize_angle(rotation),
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.center_x, self.center_y)
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Half of the diagonal: the radius of the smallest disc containing the
    /// view for any rotation.
    pub fn half_diagonal(&self) -> f64 {
        self.side * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Same footprint moved to a new center and yaw.
    pub fn moved_to(&self, x: f64, y: f64, rotation: f64) -> Result<Self> {
        Self::new(x, y, self.side, rotation)
    }

    /// Maps view-frame coordinates (`u` to the right, `v` forward, in meters)
    /// to world coordinates.
    pub fn to_world(&self, u: f64, v: f64) -> (f64, f64) {
        let (dx, dy) = view_to_world_delta(self.rotation, u, v);
        (self.center_x + dx, self.center_y + dy)
    }

    /// Inverse of [`ViewArea::to_world`].
    pub fn to_view(&self, x: f64, y: f64) -> (f64, f64) {
        world_to_view_delta(self.rotation, x - self.center_x, y - self.center_y)
    }
}

/// Rotates a view-frame displacement (`u` right, `v` forward) into the world
/// frame for a drone facing `yaw` (measured counter-clockwise from +x).
pub fn view_to_world_delta(yaw: f64, u: f64, v: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    // forward = (c, s), right = (s, -c)
    (v * c + u * s, v * s - u * c)
}

pub fn world_to_view_delta(yaw: f64, dx: f64, dy: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (dx * s - dy * c, dx * c + dy * s)
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::Invalid(format!("polygon needs at least 3 vertices, got {n}")));
        }
        if vertices.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(Error::Invalid("polygon vertices must be finite".into()));
        }
        let scale = vertices
            .iter()
            .fold(1.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
        let tol = 1e-12 * scale * scale;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if a == b {
                return Err(Error::Invalid(format!("repeated consecutive vertex at index {i}")));
            }
            if cross(a, b, c) < -tol {
                return Err(Error::Invalid(format!(
                    "polygon is not convex counter-clockwise at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= 0.0)
    }
}

fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    (0.5 * twice).max(0.0)
}

/// The four corners of a view, counter-clockwise starting at the rear-right
/// corner.
pub fn view_polygon(v: &ViewArea) -> Polygon {
    let h = 0.5 * v.side;
    let vertices = [(h, -h), (h, h), (-h, h), (-h, -h)]
        .iter()
        .map(|&(u, w)| v.to_world(u, w))
        .collect();
    // A rotated square with positive side is always convex and CCW.
    Polygon { vertices }
}

/// Area of the intersection of two convex polygons.
pub fn intersection_area(a: &Polygon, b: &Polygon) -> f64 {
    let clipped = clip_convex(a.vertices(), b.vertices());
    shoelace(&clipped).min(a.area()).min(b.area())
}

/// Sutherland–Hodgman: clips `subject` by every (CCW) edge of `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let k = input.len();
        for j in 0..k {
            let s = input[(j + k - 1) % k];
            let e = input[j];
            let cs = cross(e0, e1, s);
            let ce = cross(e0, e1, e);
            if ce >= 0.0 {
                if cs < 0.0 {
                    output.push(lerp_at_zero(s, e, cs, ce));
                }
                output.push(e);
            } else if cs >= 0.0 {
                output.push(lerp_at_zero(s, e, cs, ce));
            }
        }
    }
    output
}

fn lerp_at_zero(s: (f64, f64), e: (f64, f64), cs: f64, ce: f64) -> (f64, f64) {
    let t = cs / (cs - ce);
    (s.0 + t * (e.0 - s.0), s.1 + t * (e.1 - s.1))
}

/// Intersection over union of two view areas.
pub fn iou(a: &ViewArea, b: &ViewArea) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area(&view_polygon(a), &view_polygon(b));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Ordered sequence of views, starting at the start view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ViewArea>", into = "Vec<ViewArea>")]
pub struct Trajectory {
    views: Vec<ViewArea>,
}

impl TryFrom<Vec<ViewArea>> for Trajectory {
    type Error = Error;

    fn try_from(views: Vec<ViewArea>) -> Result<Self> {
        Trajectory::new(views)
    }
}

impl From<Trajectory> for Vec<ViewArea> {
    fn from(t: Trajectory) -> Self {
        t.views
    }
}

impl Trajectory {
    pub fn new(views: Vec<ViewArea>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Invalid("trajectory must contain at least one view".into()));
        }
        Ok(Self { views })
    }

    pub fn single(start: ViewArea) -> Self {
        Self { views: vec![start] }
    }

    pub fn views(&self) -> &[ViewArea] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> &ViewArea {
        &self.views[0]
    }

    pub fn last(&self) -> &ViewArea {
        self.views.last().expect("trajectory is non-empty")
    }

    pub fn push(&mut self, v: ViewArea) {
        self.views.push(v);
    }
}

/// Sum of distances between consecutive view centers.
pub fn path_length(t: &Trajectory) -> f64 {
    t.views
        .windows(2)
        .map(|w| distance(w[0].center(), w[1].center()))
        .sum()
}
