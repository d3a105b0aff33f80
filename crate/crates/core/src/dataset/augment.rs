//! Training-time augmentation: box blur, bounded uniform noise and mirror
//! flips. Flips act on the pixels, the attention grid and the waypoint
//! together so the supervision stays in register.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionMask, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub blur_prob: f64,
    pub noise_prob: f64,
    pub noise_eps: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blur_prob: 0.2,
            noise_prob: 0.5,
            noise_eps: 0.05,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            blur_prob: 0.0,
            noise_prob: 0.0,
            noise_eps: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
        }
    }
}

/// 3×3 box blur with edge clamping.
pub fn box_blur(pixels: &[f64], size: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, size as isize - 1) as usize;
        let c = c.clamp(0, size as isize - 1) as usize;
        pixels[r * size + c]
    };
    let mut out = Vec::with_capacity(pixels.len());
    for r in 0..size as isize {
        for c in 0..size as isize {
            let mut sum = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    sum += at(r + dr, c + dc);
                }
            }
            out.push(sum / 9.0);
        }
    }
    out
}

fn mirror_columns(values: &[f64], size: usize) -> Vec<f64> {
    values
        .chunks(size)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

fn mirror_rows(values: &[f64], size: usize) -> Vec<f64> {
    values.chunks(size).rev().flatten().copied().collect()
}

/// Left-right mirror; the waypoint is `(right, forward)` in the view frame.
pub fn flip_horizontal(
    obs: &Observation,
    mask: &AttentionMask,
    waypoint: (f64, f64),
) -> (Observation, AttentionMask, (f64, f64)) {
    let pixels = mirror_columns(&obs.pixels, obs.size);
    let grid = mirror_columns(mask.values(), mask.size());
    (
        Observation {
            pixels,
            ..obs.clone()
        },
        AttentionMask::new(mask.size(), grid).expect("mirrored mask"),
        (-waypoint.0, waypoint.1),
    )
}

/// Front-back mirror.
pub fn flip_vertical(
    obs: &Observation,
    mask: &AttentionMask,
    waypoint: (f64, f64),
) -> (Observation, AttentionMask, (f64, f64)) {
    let pixels = mirror_rows(&obs.pixels, obs.size);
    let grid = mirror_rows(mask.values(), mask.size());
    (
        Observation {
            pixels,
            ..obs.clone()
        },
        AttentionMask::new(mask.size(), grid).expect("mirrored mask"),
        (waypoint.0, -waypoint.1),
    )
}

pub fn augment(
    obs: &Observation,
    mask: &AttentionMask,
    waypoint: (f64, f64),
    cfg: &AugmentConfig,
    seed: u64,
) -> (Observation, AttentionMask, (f64, f64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = obs.clone();
    let mut mask = mask.clone();
    let mut waypoint = waypoint;

    if rng.gen::<f64>() < cfg.blur_prob {
        obs.pixels = box_blur(&obs.pixels, obs.size);
    }
    if rng.gen::<f64>() < cfg.noise_prob && cfg.noise_eps > 0.0 {
        let eps = cfg.noise_eps;
        for p in &mut obs.pixels {
            *p = (*p + rng.gen_range(-eps..=eps)).clamp(0.0, 1.0);
        }
    }
    if rng.gen::<f64>() < cfg.hflip_prob {
        (obs, mask, waypoint) = flip_horizontal(&obs, &mask, waypoint);
    }
    if rng.gen::<f64>() < cfg.vflip_prob {
        (obs, mask, waypoint) = flip_vertical(&obs, &mask, waypoint);
    }
    (obs, mask, waypoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{goal_overlap_mask, rasterize_observation, ValueNoise};
    use crate::geometry::ViewArea;

    fn sample() -> (Observation, AttentionMask, (f64, f64)) {
        let map = ValueNoise::new(5, 300.0);
        let view = ViewArea::new(150.0, 150.0, 40.0, 0.9).unwrap();
        let goal_center = view.to_world(15.0, 15.0);
        let goal = ViewArea::new(goal_center.0, goal_center.1, 8.0, 0.9).unwrap();
        let obs = rasterize_observation(&map, &view, 16).unwrap();
        let mask = goal_overlap_mask(&view, &goal, 4);
        (obs, mask, (15.0, 15.0))
    }

    #[test]
    fn flips_are_involutions() {
        let (o, m, w) = sample();
        let (o1, m1, w1) = flip_horizontal(&o, &m, w);
        assert_ne!(o1.pixels, o.pixels);
        let (o2, m2, w2) = flip_horizontal(&o1, &m1, w1);
        assert_eq!((o2, m2, w2), (o.clone(), m.clone(), w));
        let (o1, m1, w1) = flip_vertical(&o, &m, w);
        let (o2, m2, w2) = flip_vertical(&o1, &m1, w1);
        assert_eq!((o2, m2, w2), (o, m, w));
    }

    #[test]
    fn flips_keep_mask_and_waypoint_in_register() {
        let (o, m, w) = sample();
        // goal sits in the front-right patch
        assert_eq!(m.get(0, 3), 1.0);
        assert_eq!(m.values().iter().sum::<f64>(), 1.0);
        let (_, mh, wh) = flip_horizontal(&o, &m, w);
        assert_eq!(mh.get(0, 0), 1.0);
        assert!(wh.0 < 0.0 && wh.1 > 0.0);
        let (_, mv, wv) = flip_vertical(&o, &m, w);
        assert_eq!(mv.get(3, 3), 1.0);
        assert!(wv.0 > 0.0 && wv.1 < 0.0);
        // the marked patch is where the mirrored waypoint points
        let cell = 40.0 / 4.0;
        let col = ((wh.0 + 20.0) / cell).floor() as usize;
        let row = ((20.0 - wh.1) / cell).floor() as usize;
        assert_eq!(mh.get(row, col), 1.0);
    }

    #[test]
    fn blur_fixes_constant_image() {
        let img = vec![0.375; 64];
        assert_eq!(box_blur(&img, 8), img);
    }

    #[test]
    fn noise_is_bounded() {
        let (o, m, w) = sample();
        let cfg = AugmentConfig {
            blur_prob: 0.0,
            noise_prob: 1.0,
            noise_eps: 0.1,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
        };
        for seed in 0..20 {
            let (n, nm, nw) = augment(&o, &m, w, &cfg, seed);
            assert_eq!((nm, nw), (m.clone(), w));
            for (a, b) in o.pixels.iter().zip(&n.pixels) {
                assert!((a - b).abs() <= 0.1 + 1e-15);
                assert!((0.0..=1.0).contains(b));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (o, m, w) = sample();
        let cfg = AugmentConfig {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            ..AugmentConfig::default()
        };
        assert_eq!(augment(&o, &m, w, &cfg, 3), augment(&o, &m, w, &cfg, 3));
    }
}
