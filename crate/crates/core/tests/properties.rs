use std::f64::consts::TAU;

use avdn_core::agents::{tokenize_dialog, AgentOutput, AgentState, Policy, INS, QUE};
use avdn_core::dataset::{generate_episode, AttentionMask, DialogRound, GeneratorConfig, InstructionStyle};
use avdn_core::fusion::fuse_outputs;
use avdn_core::geometry::{intersection_area, iou, view_polygon, ViewArea};
use avdn_core::nn::{softmax_rows, Tensor2};
use avdn_core::simulator::{run_episode, RolloutConfig};
use avdn_core::Result;
use proptest::prelude::*;

fn view() -> impl Strategy<Value = ViewArea> {
    (-50.0f64..50.0, -50.0f64..50.0, 1.0f64..40.0, 0.0f64..TAU)
        .prop_map(|(x, y, s, r)| ViewArea::new(x, y, s, r).unwrap())
}

fn output(grid: usize) -> impl Strategy<Value = AgentOutput> {
    (
        (-500.0f64..500.0, -500.0f64..500.0),
        0.0f64..TAU,
        0.0f64..=1.0,
        prop::collection::vec(0.0f64..=1.0, grid * grid),
    )
        .prop_map(move |(c, r, s, a)| AgentOutput {
            next_center: c,
            next_rotation: r,
            stop_prob: s,
            attention: AttentionMask::new(grid, a).unwrap(),
        })
}

/// Whether `p` lies on segment `ab` within `tol`.
fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1) <= tol;
    }
    let t = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2;
    let q = (a.0 + t * dx, a.1 + t * dy);
    (-1e-12..=1.0 + 1e-12).contains(&t) && (p.0 - q.0).hypot(p.1 - q.1) <= tol
}

/// Point-in-triangle with slack.
fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64), tol: f64) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let area = cross(a, b, c);
    if area.abs() < 1e-9 {
        return on_segment(p, a, b, tol) || on_segment(p, b, c, tol) || on_segment(p, a, c, tol);
    }
    let s = area.signum();
    let scale = area.abs().sqrt().max(1.0);
    [cross(a, b, p), cross(b, c, p), cross(c, a, p)]
        .iter()
        .all(|&v| v * s >= -tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_bounds_and_symmetry(a in view(), b in view()) {
        let ab = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        let inter = intersection_area(&view_polygon(&a), &view_polygon(&b));
        prop_assert!(inter <= a.area().min(b.area()) * (1.0 + 1e-12));
    }

    #[test]
    fn iou_rigid_motion_invariant(a in view(), b in view(), tx in -100.0f64..100.0, ty in -100.0f64..100.0, phi in 0.0f64..TAU) {
        let rot = |v: &ViewArea| {
            let (c, s) = (phi.cos(), phi.sin());
            let x = v.center_x * c - v.center_y * s + tx;
            let y = v.center_x * s + v.center_y * c + ty;
            ViewArea::new(x, y, v.side, v.rotation + phi).unwrap()
        };
        prop_assert!((iou(&a, &b) - iou(&rot(&a), &rot(&b))).abs() < 1e-9);
    }

    #[test]
    fn quarter_turns_leave_a_square_unchanged(a in view(), b in view(), k in 0u32..4) {
        let spun = ViewArea::new(a.center_x, a.center_y, a.side, a.rotation + k as f64 * TAU / 4.0).unwrap();
        prop_assert!((iou(&a, &b) - iou(&spun, &b)).abs() < 1e-9);
    }

    #[test]
    fn fusion_is_idempotent(a in output(4)) {
        prop_assert_eq!(fuse_outputs(&[a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn fusion_is_permutation_invariant(a in output(3), b in output(3), c in output(3)) {
        let base = fuse_outputs(&[a.clone(), b.clone(), c.clone()]).unwrap();
        for perm in [[&b, &a, &c], [&c, &b, &a], [&a, &c, &b], [&b, &c, &a], [&c, &a, &b]] {
            let other = fuse_outputs(&perm.map(|o| o.clone())).unwrap();
            prop_assert_eq!(other.next_center, base.next_center);
            prop_assert_eq!(other.stop_prob, base.stop_prob);
            prop_assert_eq!(&other.attention, &base.attention);
            let d = (other.next_rotation - base.next_rotation).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) < 1e-9, "rotation {} vs {}", other.next_rotation, base.next_rotation);
        }
    }

    #[test]
    fn fused_fields_stay_inside_members(a in output(2), b in output(2), c in output(2)) {
        let two = fuse_outputs(&[a.clone(), b.clone()]).unwrap();
        prop_assert!(on_segment(two.next_center, a.next_center, b.next_center, 1e-9));
        let three = fuse_outputs(&[a.clone(), b.clone(), c.clone()]).unwrap();
        prop_assert!(in_triangle(three.next_center, a.next_center, b.next_center, c.next_center, 1e-9));
        for f in [&two, &three] {
            prop_assert!((0.0..=1.0).contains(&f.stop_prob));
            prop_assert!(f.attention.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((0.0..TAU).contains(&f.next_rotation));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 1..24), shift in -100.0f64..100.0) {
        let n = vals.len();
        let t = Tensor2::from_vec(1, n, vals.clone()).unwrap();
        let s = softmax_rows(&t);
        prop_assert!((s.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.row(0).iter().all(|&p| (0.0..=1.0).contains(&p)));
        let shifted = softmax_rows(&Tensor2::from_vec(1, n, vals.iter().map(|v| v + shift).collect()).unwrap());
        for (p, q) in s.row(0).iter().zip(shifted.row(0)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn markers_recover_round_structure(
        rounds in prop::collection::vec(
            (prop::option::of("[a-z\\[\\] ]{0,24}"), "[a-zA-Z\\[\\] ]{0,24}"),
            0..6,
        )
    ) {
        let dialog: Vec<DialogRound> = rounds
            .iter()
            .map(|(q, i)| DialogRound { question: q.clone(), instruction: i.clone(), style: InstructionStyle::Egocentric })
            .collect();
        let seq = tokenize_dialog(&dialog);
        prop_assert_eq!(seq.instruction_markers().len(), dialog.len());
        prop_assert_eq!(seq.question_markers().len(), dialog.iter().filter(|r| r.question.is_some()).count());
        // each round opens with its markers in order
        let mut pos = 0;
        for r in &dialog {
            if r.question.is_some() {
                prop_assert_eq!(seq.tokens[pos], QUE);
                pos += 1 + r.question.as_ref().unwrap().split_whitespace().count();
            }
            prop_assert_eq!(seq.tokens[pos], INS);
            pos += 1 + r.instruction.split_whitespace().count();
        }
        prop_assert_eq!(pos, seq.len());
    }
}

/// Deterministic pseudo-random waypoints that ignore the goal.
struct Wander {
    seed: u64,
    reach: f64,
}

impl Policy for Wander {
    fn act(&self, state: &AgentState) -> Result<AgentOutput> {
        let h = (self.seed ^ (state.step_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * TAU;
        let v = &state.current_view;
        Ok(AgentOutput::from_world_delta(
            v,
            (self.reach * angle.cos(), self.reach * angle.sin()),
            0.0,
            AttentionMask::filled(4, 0.0),
        ))
    }

    fn resolution(&self) -> usize {
        8
    }

    fn patch_grid(&self) -> usize {
        4
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_stay_bounded(seed in 0u64..10_000, reach in 0.0f64..400.0, m in 1usize..8) {
        let ep = generate_episode(seed, &GeneratorConfig::default()).unwrap();
        let cfg = RolloutConfig { max_steps: Some(m), ..RolloutConfig::default() };
        let out = run_episode(&Wander { seed, reach }, &ep, &cfg).unwrap();
        let views = out.trajectory.views();
        prop_assert!(views.len() <= m + 1);
        prop_assert_eq!(out.log.len(), views.len() - 1);
        for w in views.windows(2) {
            let step = (w[1].center_x - w[0].center_x).hypot(w[1].center_y - w[0].center_y);
            prop_assert!(step <= cfg.step_max + 1e-9);
        }
        for v in views {
            let h = v.half_diagonal();
            prop_assert!(v.center_x >= h - 1e-9 && v.center_x <= ep.world_side - h + 1e-9);
            prop_assert!(v.center_y >= h - 1e-9 && v.center_y <= ep.world_side - h + 1e-9);
        }
    }
}
