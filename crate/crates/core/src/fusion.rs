//! Arithmetic-mean ensembling of per-step policy outputs.
//!
//! Members run on the same state and their outputs are averaged field by
//! field; the fused output drives a single rollout. Rotations are averaged on
//! the circle.

use std::path::Path;

use crate::agents::{AgentOutput, AgentState, NetworkPolicy, Policy};
use crate::dataset::AttentionMask;
use crate::error::{Error, Result};
use crate::geometry::normalize_angle;
use crate::nn::{AgentKind, Checkpoint};

/// Mean that is exact when all values agree and independent of input order.
fn mean(values: &[f64]) -> f64 {
    if values.iter().all(|&v| v == values[0]) {
        return values[0];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    (sorted.iter().sum::<f64>() / sorted.len() as f64).clamp(lo, hi)
}

/// Circular mean; exactly cancelling headings fall back to the first one.
fn circular_mean(angles: &[f64]) -> f64 {
    if angles.iter().all(|&a| a == angles[0]) {
        return angles[0];
    }
    let mut cos: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
    let mut sin: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
    cos.sort_by(f64::total_cmp);
    sin.sort_by(f64::total_cmp);
    let c: f64 = cos.iter().sum();
    let s: f64 = sin.iter().sum();
    if c.hypot(s) <= 1e-12 * angles.len() as f64 {
        return angles[0];
    }
    normalize_angle(s.atan2(c))
}

pub fn fuse_outputs(outputs: &[AgentOutput]) -> Result<AgentOutput> {
    if outputs.len() < 2 {
        return Err(Error::Invalid(format!(
            "fusion needs at least 2 outputs, got {}",
            outputs.len()
        )));
    }
    let size = outputs[0].attention.size();
    if let Some((i, o)) = outputs.iter().enumerate().find(|(_, o)| o.attention.size() != size) {
        return Err(Error::Shape(format!(
            "member {i} attention is {0}x{0}, member 0 is {size}x{size}",
            o.attention.size()
        )));
    }
    let field = |f: &dyn Fn(&AgentOutput) -> f64| mean(&outputs.iter().map(f).collect::<Vec<_>>());
    let grid = (0..size * size)
        .map(|k| field(&|o| o.attention.values()[k]))
        .collect();
    let fused = AgentOutput {
        next_center: (field(&|o| o.next_center.0), field(&|o| o.next_center.1)),
        next_rotation: circular_mean(&outputs.iter().map(|o| o.next_rotation).collect::<Vec<_>>()),
        stop_prob: field(&|o| o.stop_prob),
        attention: AttentionMask::new(size, grid)?,
    };
    fused.validate()?;
    Ok(fused)
}

/// Two or more networks sharing input resolution and patch grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<NetworkPolicy>,
}

impl Ensemble {
    pub fn new(members: Vec<NetworkPolicy>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Invalid(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let (res, grid) = (members[0].resolution(), members[0].patch_grid());
        if let Some(i) = members
            .iter()
            .position(|m| m.resolution() != res || m.patch_grid() != grid)
        {
            return Err(Error::Shape(format!(
                "member {i} uses a different observation layout than member 0"
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[NetworkPolicy] {
        &self.members
    }

    /// Reads a manifest of `kind path` lines; relative paths resolve against
    /// the manifest's directory. Blank lines and `#` comments are skipped.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut members = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, file) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Record {
                line: i + 1,
                field: "member".into(),
                message: "expected `<kind> <checkpoint path>`".into(),
            })?;
            let kind: AgentKind = kind.parse()?;
            let file = base.join(file.trim());
            members.push(NetworkPolicy::expecting(kind, Checkpoint::load(&file)?)?);
        }
        Self::new(members)
    }
}

/// Runs every member on `state` and fuses the results.
pub fn fused_policy(ensemble: &Ensemble, state: &AgentState) -> Result<AgentOutput> {
    let outputs = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(index, m)| {
            m.act(state).map_err(|e| Error::Member {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fuse_outputs(&outputs)
}

impl Policy for Ensemble {
    fn act(&self, state: &AgentState) -> Result<AgentOutput> {
        fused_policy(self, state)
    }

    fn resolution(&self) -> usize {
        self.members[0].resolution()
    }

    fn patch_grid(&self) -> usize {
        self.members[0].patch_grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn out(c: (f64, f64), rot: f64, stop: f64, att: f64) -> AgentOutput {
        AgentOutput {
            next_center: c,
            next_rotation: rot,
            stop_prob: stop,
            attention: AttentionMask::filled(2, att),
        }
    }

    #[test]
    fn examples() {
        let f = fuse_outputs(&[out((2.0, 4.0), 0.0, 0.2, 0.0), out((4.0, 6.0), FRAC_PI_2, 0.8, 1.0)]).unwrap();
        assert_eq!(f.next_center, (3.0, 5.0));
        assert!((f.stop_prob - 0.5).abs() < 1e-15);
        assert!((f.next_rotation - FRAC_PI_4).abs() < 1e-12);
        assert!(f.attention.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn idempotent() {
        let a = out((1.1, -7.3), 5.9, 0.37, 0.123);
        assert_eq!(fuse_outputs(&[a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(fuse_outputs(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn seam_and_opposed_rotations() {
        let f = fuse_outputs(&[out((0.0, 0.0), 0.1, 0.0, 0.0), out((0.0, 0.0), 2.0 * PI - 0.1, 0.0, 0.0)]).unwrap();
        assert!(f.next_rotation.abs() < 1e-12 || (f.next_rotation - 2.0 * PI).abs() < 1e-12);
        let f = fuse_outputs(&[out((0.0, 0.0), 0.0, 0.0, 0.0), out((0.0, 0.0), PI, 0.0, 0.0)]).unwrap();
        assert_eq!(f.next_rotation, 0.0);
        let f = fuse_outputs(&[out((0.0, 0.0), PI, 0.0, 0.0), out((0.0, 0.0), 0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(f.next_rotation, PI);
    }

    #[test]
    fn errors() {
        let a = out((0.0, 0.0), 0.0, 0.0, 0.0);
        assert!(fuse_outputs(std::slice::from_ref(&a)).is_err());
        let mut b = a.clone();
        b.attention = AttentionMask::filled(3, 0.0);
        assert!(matches!(fuse_outputs(&[a, b]), Err(Error::Shape(_))));
    }
}
