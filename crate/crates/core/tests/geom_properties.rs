mod support;

use std::f64::consts::PI;

use egosim::geom::*;
use proptest::prelude::*;
use rand::Rng;

use support::{frob, homogeneous_project, quat_rotation};

fn random_axis_angle(r: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    loop {
        let u: Vec3 = [0, 1, 2].map(|_| r.random_range(-1.0..1.0));
        let n = norm(u);
        if n > 1e-3 && n <= 1.0 {
            let theta = r.random_range(lo..hi);
            return scale3(u, theta / n);
        }
    }
}

#[test]
fn rodrigues_matches_quaternion_oracle() {
    let mut r = egosim::rng::seeded(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = random_axis_angle(&mut r, 1e-6, PI);
        let got = axis_angle_to_rotation(AxisAngle(v)).unwrap();
        worst = worst.max(frob(got.matrix(), &quat_rotation(v)));
    }
    assert!(worst < 1e-9, "worst Frobenius error {worst:e}");
}

#[test]
fn small_angles_match_quaternion_oracle() {
    for mag in [0.0, 1e-12, 1e-9] {
        for axis in [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [-0.48, 0.6, 0.64]] {
            let v = scale3(axis, mag);
            let got = axis_angle_to_rotation(AxisAngle(v)).unwrap();
            let err = frob(got.matrix(), &quat_rotation(v));
            assert!(err < 1e-9, "|v| = {mag:e}: {err:e}");
            assert!(got.orthonormality_error() < 1e-9);
        }
    }
}

#[test]
fn projection_matches_homogeneous_oracle() {
    let k = Intrinsics {
        fx: 70.0,
        fy: 55.0,
        cx: 30.5,
        cy: 33.0,
        width: 64,
        height: 64,
    };
    let mut r = egosim::rng::seeded(5);
    let cloud: Vec<Vec3> = (0..500)
        .map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(0.1..5.0)])
        .collect();
    let (px, vis) = project_joints(&cloud, &k);
    for ((p, q), v) in cloud.iter().zip(&px).zip(&vis) {
        let o = homogeneous_project(*p, k.fx, k.fy, k.cx, k.cy);
        assert!(*v);
        assert!((q[0] - o[0]).abs() < 1e-9 && (q[1] - o[1]).abs() < 1e-9);
    }
    let (_, vis) = project_joints(&[[0.0, 0.0, -1.0], [0.0, 0.0, 0.0]], &k);
    assert_eq!(vis, vec![false, false]);
}

#[test]
fn optical_axis_projects_to_principal_point() {
    let k = Intrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 240.0,
        cy: 240.0,
        width: 480,
        height: 480,
    };
    assert_eq!(k.project([0.0, 0.0, 1.0]), Some([240.0, 240.0]));
}

fn axis_angle() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-3.0f64..3.0)
}

fn head() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.2f64..1.2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotation_is_orthonormal_with_unit_determinant(v in axis_angle()) {
        let r = axis_angle_to_rotation(AxisAngle(v)).unwrap();
        prop_assert!(r.orthonormality_error() < 1e-9);
        prop_assert!((determinant(r.matrix()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_axis_is_fixed(v in axis_angle()) {
        prop_assume!(norm(v) > 1e-6);
        let u = scale3(v, 1.0 / norm(v));
        let r = axis_angle_to_rotation(AxisAngle(v)).unwrap();
        prop_assert!(norm(sub(r.apply(u), u)) < 1e-9);
    }

    #[test]
    fn opposite_rotations_cancel(v in axis_angle()) {
        let a = axis_angle_to_rotation(AxisAngle(v)).unwrap();
        let b = axis_angle_to_rotation(AxisAngle(scale3(v, -1.0))).unwrap();
        prop_assert!(frobenius_diff(a.compose(&b).matrix(), &IDENTITY) < 1e-9);
    }

    #[test]
    fn cross_matrix_is_antisymmetric(v in axis_angle()) {
        prop_assume!(norm(v) > 1e-3);
        let u = scale3(v, 1.0 / norm(v));
        let k = cross_matrix(u).unwrap();
        let kt = transpose(&k);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(kt[i][j], -k[i][j]);
            }
        }
        let w = [0.3, -1.1, 2.0];
        prop_assert!(norm(sub(mat_vec(&k, w), cross(u, w))) < 1e-12);
    }

    #[test]
    fn head_rays_have_zero_moment_and_unit_direction(h in head()) {
        let pose = head_to_pose(h).unwrap();
        prop_assert_eq!(pose.translation, [0.0; 3]);
        let map = plucker_map(&pose, &Intrinsics::default().downscaled(4).unwrap()).unwrap();
        for px in map.rays.chunks(6) {
            prop_assert!(px[3..].iter().all(|&m| m == 0.0));
            prop_assert!((norm([px[0], px[1], px[2]]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn translated_rays_are_plucker_orthogonal(h in head(), t in prop::array::uniform3(-3.0f64..3.0)) {
        let pose = CameraPose { rotation: axis_angle_to_rotation(AxisAngle(h)).unwrap(), translation: t };
        let map = plucker_map(&pose, &Intrinsics::default().downscaled(4).unwrap()).unwrap();
        for px in map.rays.chunks(6) {
            prop_assert!(dot([px[0], px[1], px[2]], [px[3], px[4], px[5]]).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_scale_invariant(p in prop::array::uniform3(-2.0f64..2.0), z in 0.1f64..4.0, s in 0.01f64..100.0) {
        let k = Intrinsics::default();
        let p = [p[0], p[1], z];
        let a = k.project(p).unwrap();
        let b = k.project(scale3(p, s)).unwrap();
        prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }
}
