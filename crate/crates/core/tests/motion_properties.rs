mod support;

use egosim::motion::{
    forward_hand_joints, max_frame_delta, split_parts, synth_motion, MotionFrame, MotionSequence, Style,
    BODY_FEET_DIM, DEFAULT_FPS, FRAME_DIM, HAND_DIM, HAND_JOINTS, HEAD_DIM, MAX_FRAME_DELTA,
};
use proptest::prelude::*;

fn style() -> impl Strategy<Value = Style> {
    prop::sample::select(Style::ALL.to_vec())
}

fn apply(m: &support::M3, v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|c| m[r][c] * v[c]).sum();
    }
    out
}

proptest! {
    #[test]
    fn split_round_trips(flat in prop::collection::vec(-4.0f64..4.0, FRAME_DIM)) {
        let f = split_parts(&flat).unwrap();
        prop_assert_eq!(&f.body_feet[..], &flat[..BODY_FEET_DIM]);
        prop_assert_eq!(&f.head[..], &flat[BODY_FEET_DIM..BODY_FEET_DIM + HEAD_DIM]);
        prop_assert_eq!(&f.hands[..], &flat[BODY_FEET_DIM + HEAD_DIM..]);
        prop_assert_eq!(f.concat().to_vec(), flat);
    }

    #[test]
    fn sequences_round_trip_through_flat(k in 1usize..6, seed in any::<u64>(), st in style()) {
        let s = synth_motion(seed, k, st).unwrap();
        let back = MotionSequence::from_flat(&s.to_flat(), DEFAULT_FPS).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn synth_is_deterministic_and_smooth(seed in any::<u64>(), k in 1usize..40, st in style()) {
        let a = synth_motion(seed, k, st).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(&a, &synth_motion(seed, k, st).unwrap());
        prop_assert!(max_frame_delta(&a) <= MAX_FRAME_DELTA);
        prop_assert!(a.frames.iter().all(MotionFrame::is_finite));
    }

    #[test]
    fn hand_fk_ignores_body_and_head(
        hands in prop::collection::vec(-1.0f64..1.0, 2 * HAND_DIM),
        body in prop::collection::vec(-1.0f64..1.0, BODY_FEET_DIM),
        head in prop::collection::vec(-1.0f64..1.0, HEAD_DIM),
    ) {
        let mut f = MotionFrame::default();
        f.hands.copy_from_slice(&hands);
        let posed = forward_hand_joints(&f);
        f.body_feet.copy_from_slice(&body);
        f.head.copy_from_slice(&head);
        prop_assert_eq!(forward_hand_joints(&f), posed);
    }

    #[test]
    fn bone_lengths_are_pose_invariant(hands in prop::collection::vec(-1.5f64..1.5, 2 * HAND_DIM)) {
        let mut f = MotionFrame::default();
        f.hands.copy_from_slice(&hands);
        let rest = forward_hand_joints(&MotionFrame::default());
        let posed = forward_hand_joints(&f);
        let parents = egosim::motion::HAND_PARENTS;
        for (a, b) in [(&rest.left, &posed.left), (&rest.right, &posed.right)] {
            for j in 1..HAND_JOINTS {
                let len = |p: &Vec<[f64; 3]>| {
                    let d: Vec<f64> = (0..3).map(|i| p[j][i] - p[parents[j]][i]).collect();
                    d.iter().map(|x| x * x).sum::<f64>().sqrt()
                };
                prop_assert!((len(a) - len(b)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn wrist_half_turn_matches_quaternion_oracle() {
    let rest = forward_hand_joints(&MotionFrame::default());
    let mut f = MotionFrame::default();
    f.hands[2] = std::f64::consts::PI;
    let posed = forward_hand_joints(&f);
    let r = support::quat_rotation([0.0, 0.0, std::f64::consts::PI]);
    let root = rest.left[0];
    for j in 0..HAND_JOINTS {
        let rel = apply(&r, [0, 1, 2].map(|i| rest.left[j][i] - root[i]));
        for i in 0..3 {
            assert!((posed.left[j][i] - (root[i] + rel[i])).abs() < 1e-12, "joint {j}");
        }
    }
    assert_eq!(posed.right, rest.right);
}

#[test]
fn split_rejects_other_lengths() {
    for n in [0, 1, FRAME_DIM - 1, FRAME_DIM + 1, 2 * FRAME_DIM] {
        assert!(split_parts(&vec![0.0; n]).is_err(), "len {n}");
    }
    assert!(MotionSequence::from_flat(&[f64::NAN; FRAME_DIM], DEFAULT_FPS).is_err());
}
