//! Analytic scene: a textured room with seeded boxes and spheres, the actor's
//! hands as joint spheres, a fixed exocentric camera and the head-driven
//! egocentric camera at the origin.

use rand::Rng as _;

use crate::geom::{self, CameraPose, Intrinsics, RotationMatrix, Vec3};
use crate::motion::{forward_body_joints, forward_hand_joints, MotionFrame};
use crate::rng;

const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    /// Seen from inside.
    Room { min: Vec3, max: Vec3 },
    Cube { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Texture {
    Checker { a: Vec3, b: Vec3, cell: f64 },
    Stripes { a: Vec3, b: Vec3, period: f64, axis: usize },
    Solid(Vec3),
}

impl Texture {
    fn color(&self, p: Vec3, normal: Vec3) -> Vec3 {
        match *self {
            Texture::Checker { a, b, cell } => {
                // Only the in-plane coordinates; the one along the normal is
                // constant on a face and would flip parity with rounding.
                let s: i64 = (0..3)
                    .filter(|&ax| normal[ax].abs() < 0.5)
                    .map(|ax| (p[ax] / cell).floor() as i64)
                    .sum();
                if s.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Stripes { a, b, period, axis } => {
                let w = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * p[axis] / period).sin();
                [0, 1, 2].map(|c| a[c] * w + b[c] * (1.0 - w))
            }
            Texture::Solid(c) => c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Primitive {
    shape: Shape,
    texture: Texture,
}

struct Hit {
    t: f64,
    normal: Vec3,
    texture: Texture,
}

fn slab(o: Vec3, d: Vec3, min: Vec3, max: Vec3) -> (f64, f64, usize, usize) {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut a0, mut a1) = (0, 0);
    for a in 0..3 {
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if lo > t0 {
            t0 = lo;
            a0 = a;
        }
        if hi < t1 {
            t1 = hi;
            a1 = a;
        }
    }
    (t0, t1, a0, a1)
}

fn axis_normal(axis: usize, d: Vec3, facing_ray: bool) -> Vec3 {
    let mut n = [0.0; 3];
    let s = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    n[axis] = if facing_ray { s } else { -s };
    n
}

impl Shape {
    fn intersect(&self, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Room { min, max } => {
                let (_, t1, _, a1) = slab(o, d, min, max);
                (t1 > HIT_EPS).then(|| (t1, axis_normal(a1, d, true)))
            }
            Shape::Cube { min, max } => {
                let (t0, t1, a0, _) = slab(o, d, min, max);
                (t0 <= t1 && t0 > HIT_EPS).then(|| (t0, axis_normal(a0, d, true)))
            }
            Shape::Sphere { center, radius } => {
                let oc = geom::sub(o, center);
                let a = geom::dot(d, d);
                let b = geom::dot(oc, d);
                let c = geom::dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                (t > HIT_EPS).then(|| {
                    let p = geom::add(o, geom::scale3(d, t));
                    (t, geom::scale3(geom::sub(p, center), 1.0 / radius))
                })
            }
        }
    }
}

const LIGHT: Vec3 = [0.267_261_241_912_424_4, -0.801_783_725_737_273_2, -0.534_522_483_824_848_8];
const SKIN: Vec3 = [0.92, 0.72, 0.58];

/// A rendered frame: `H x W x 3` RGB in `[0, 1]`, per-pixel world points,
/// and whether each pixel shows static scenery.
pub struct Render {
    pub rgb: Vec<f64>,
    pub points: Vec<f64>,
    pub is_static: Vec<bool>,
}

/// The synthetic capture rig.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    statics: Vec<Primitive>,
    pub ego: Intrinsics,
    pub exo: Intrinsics,
    pub exo_pose: CameraPose,
    /// World position of the hand skeleton origin and its metric scale.
    pub hand_origin: Vec3,
    pub hand_scale: f64,
    pub joint_radius: f64,
    /// Pelvis position of the toy body in world coordinates.
    pub body_root: Vec3,
}

/// World-to-camera rotation looking from `eye` toward `target` with image
/// rows along world +y (down).
pub fn look_at(eye: Vec3, target: Vec3) -> CameraPose {
    let z = geom::sub(target, eye);
    let z = geom::scale3(z, 1.0 / geom::norm(z));
    let x = geom::cross([0.0, 1.0, 0.0], z);
    let x = geom::scale3(x, 1.0 / geom::norm(x));
    let y = geom::cross(z, x);
    CameraPose::from_center(RotationMatrix([x, y, z]), eye)
}

impl SyntheticWorld {
    /// The scene is a pure function of `world_seed`; cameras are fixed.
    pub fn new(world_seed: u64, ego: Intrinsics, exo: Intrinsics) -> Self {
        let mut r = rng::substream(world_seed, "world", 0);
        let mut color = |lo: f64| -> Vec3 { [0, 1, 2].map(|_| r.random_range(lo..1.0)) };
        let mut statics = vec![Primitive {
            shape: Shape::Room {
                min: [-3.0, -1.4, -3.0],
                max: [3.0, 1.6, 4.0],
            },
            texture: Texture::Checker {
                a: color(0.5),
                b: color(0.05),
                cell: 0.5,
            },
        }];
        let mut r = rng::substream(world_seed, "world.props", 0);
        for i in 0..4 {
            let x = -2.2 + 1.45 * i as f64 + r.random_range(-0.3..0.3);
            let z = r.random_range(1.8..3.2);
            let size = r.random_range(0.3..0.6);
            let tex = if i % 2 == 0 {
                Texture::Stripes {
                    a: [r.random_range(0.6..1.0), r.random_range(0.0..0.4), r.random_range(0.0..0.4)],
                    b: [r.random_range(0.0..0.3), r.random_range(0.3..0.7), r.random_range(0.5..1.0)],
                    period: 0.25,
                    axis: i % 3,
                }
            } else {
                Texture::Solid([r.random_range(0.2..0.9), r.random_range(0.5..1.0), r.random_range(0.1..0.5)])
            };
            let shape = if i % 2 == 0 {
                Shape::Cube {
                    min: [x - size, 1.6 - 2.0 * size, z - size],
                    max: [x + size, 1.6, z + size],
                }
            } else {
                Shape::Sphere {
                    center: [x, r.random_range(-0.4..0.6), z],
                    radius: size,
                }
            };
            statics.push(Primitive { shape, texture: tex });
        }
        let body_root = [0.0, 0.65, 0.0];
        SyntheticWorld {
            statics,
            ego,
            exo,
            exo_pose: look_at([0.4, 0.2, 2.6], [0.0, 0.6, 0.0]),
            hand_origin: [0.0, 0.12, 0.35],
            hand_scale: 0.04,
            joint_radius: 0.02,
            body_root,
        }
    }

    /// Hand joints in world coordinates, left then right.
    pub fn hand_joints_world(&self, frame: &MotionFrame) -> Vec<Vec3> {
        let hands = forward_hand_joints(frame);
        hands
            .left
            .iter()
            .chain(&hands.right)
            .map(|&p| geom::add(self.hand_origin, geom::scale3(p, self.hand_scale)))
            .collect()
    }

    pub fn body_joints_world(&self, frame: &MotionFrame) -> Vec<Vec3> {
        forward_body_joints(frame, self.body_root)
    }

    fn trace(&self, o: Vec3, d: Vec3, hands: &[Vec3]) -> (Hit, bool) {
        let mut best: Option<(Hit, bool)> = None;
        let mut consider = |shape: Shape, texture: Texture, is_static: bool| {
            if let Some((t, normal)) = shape.intersect(o, d) {
                if best.as_ref().is_none_or(|(b, _)| t < b.t) {
                    best = Some((Hit { t, normal, texture }, is_static));
                }
            }
        };
        for p in &self.statics {
            consider(p.shape, p.texture, true);
        }
        for &c in hands {
            consider(
                Shape::Sphere {
                    center: c,
                    radius: self.joint_radius,
                },
                Texture::Solid(SKIN),
                false,
            );
        }
        best.expect("every ray leaves through the room")
    }

    /// Ray-cast one egocentric frame through each pixel center.
    pub fn render_ego(&self, pose: &CameraPose, frame: &MotionFrame) -> Render {
        let (h, w) = (self.ego.height, self.ego.width);
        let hands = self.hand_joints_world(frame);
        let rt = pose.rotation.transpose();
        let origin = pose.center();
        let mut out = Render {
            rgb: vec![0.0; h * w * 3],
            points: vec![0.0; h * w * 3],
            is_static: vec![false; h * w],
        };
        for i in 0..h {
            for j in 0..w {
                let d = rt.apply(self.ego.unproject(j as f64 + 0.5, i as f64 + 0.5));
                let (hit, is_static) = self.trace(origin, d, &hands);
                let p = geom::add(origin, geom::scale3(d, hit.t));
                let shade = 0.7 + 0.3 * geom::dot(hit.normal, LIGHT).abs();
                let c = hit.texture.color(p, hit.normal);
                let px = i * w + j;
                for a in 0..3 {
                    out.rgb[px * 3 + a] = (c[a] * shade).clamp(0.0, 1.0);
                    out.points[px * 3 + a] = p[a];
                }
                out.is_static[px] = is_static;
            }
        }
        out
    }

    /// Exocentric pixel positions of the body joints (NaN when behind the
    /// camera).
    pub fn project_body(&self, frame: &MotionFrame) -> Vec<[f64; 2]> {
        let cam: Vec<Vec3> = self
            .body_joints_world(frame)
            .into_iter()
            .map(|p| self.exo_pose.world_to_camera(p))
            .collect();
        geom::project_joints(&cam, &self.exo).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> SyntheticWorld {
        SyntheticWorld::new(7, Intrinsics::default(), Intrinsics::default())
    }

    #[test]
    fn look_at_centers_the_target() {
        let pose = look_at([1.0, -0.5, 3.0], [0.2, 0.4, -0.1]);
        let p = pose.world_to_camera([0.2, 0.4, -0.1]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
        assert!(pose.rotation.orthonormality_error() < 1e-12);
    }

    #[test]
    fn body_is_in_exo_view_and_hands_in_ego_view() {
        let w = world();
        let f = MotionFrame::default();
        for p in w.project_body(&f) {
            assert!(p[0] > 0.0 && p[0] < 64.0 && p[1] > 0.0 && p[1] < 64.0, "{p:?}");
        }
        let r = w.render_ego(&CameraPose::identity(), &f);
        let hand_pixels = r.is_static.iter().filter(|s| !**s).count();
        assert!(hand_pixels > 20, "{hand_pixels} hand pixels");
    }

    #[test]
    fn rendered_points_lie_on_their_pixel_rays() {
        let w = world();
        let pose = crate::geom::head_to_pose([0.1, -0.3, 0.05]).unwrap();
        let r = w.render_ego(&pose, &MotionFrame::default());
        for px in [0usize, 100, 2080, 4095] {
            let p = [r.points[px * 3], r.points[px * 3 + 1], r.points[px * 3 + 2]];
            let uv = w.ego.project(pose.world_to_camera(p)).unwrap();
            assert!((uv[0] - ((px % 64) as f64 + 0.5)).abs() < 1e-9);
            assert!((uv[1] - ((px / 64) as f64 + 0.5)).abs() < 1e-9);
        }
        assert!(r.rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
