//! Camera and rotation mathematics: axis-angle rotations, rotation-only
//! extrinsics, Plücker ray maps and pinhole projection.
//!
//! Extrinsics map world points into the camera frame, `X_c = R X_w + t`.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Below this angle the closed form divides by a vanishing norm and the
/// second-order series is used instead.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Points at or closer than this depth are not projected.
pub const Z_NEAR: f64 = 1e-6;

const UNIT_TOL: f64 = 1e-6;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn frobenius_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s.sqrt()
}

pub fn determinant(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

fn skew(v: Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn mat_add_scaled(acc: &mut Mat3, m: &Mat3, s: f64) {
    for i in 0..3 {
        for j in 0..3 {
            acc[i][j] += s * m[i][j];
        }
    }
}

/// Rotation encoded as its axis scaled by the angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        norm(self.0)
    }
}

/// Proper orthogonal 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(pub Mat3);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix(IDENTITY);

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.0, v)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(transpose(&self.0))
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(mat_mul(&self.0, &other.0))
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = mat_mul(&transpose(&self.0), &self.0);
        let mut worst = (determinant(&self.0) - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((rtr[i][j] - IDENTITY[i][j]).abs());
            }
        }
        worst
    }
}

/// The cross-product matrix `[u]×` of a unit vector, so that `[u]× w = u × w`.
pub fn cross_matrix(u: Vec3) -> Result<Mat3> {
    if !u.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("cross_matrix input"));
    }
    let n = norm(u);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Precondition(format!(
            "cross_matrix needs a unit vector, got norm {n}"
        )));
    }
    Ok(skew(u))
}

/// Rodrigues' formula `R = I + sin θ [u]× + (1 − cos θ) [u]×²`.
///
/// For `θ < SMALL_ANGLE` the series `I + [v]× + ½[v]×²` in the unnormalized
/// vector is used, which avoids normalizing a vanishing axis.
pub fn axis_angle_to_rotation(v: AxisAngle) -> Result<RotationMatrix> {
    if !v.0.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("axis-angle"));
    }
    let theta = v.angle();
    let mut r = IDENTITY;
    if theta < SMALL_ANGLE {
        let k = skew(v.0);
        let k2 = mat_mul(&k, &k);
        mat_add_scaled(&mut r, &k, 1.0);
        mat_add_scaled(&mut r, &k2, 0.5);
    } else {
        let k = cross_matrix(scale3(v.0, 1.0 / theta))?;
        let k2 = mat_mul(&k, &k);
        mat_add_scaled(&mut r, &k, theta.sin());
        mat_add_scaled(&mut r, &k2, 1.0 - theta.cos());
    }
    Ok(RotationMatrix(r))
}

/// Camera extrinsics `X_c = R X_w + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            rotation: RotationMatrix::IDENTITY,
            translation: [0.0; 3],
        }
    }

    /// Camera center in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        scale3(self.rotation.transpose().apply(self.translation), -1.0)
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        add(self.rotation.apply(p), self.translation)
    }

    /// A pose looking from `center` with world-to-camera rotation `rotation`.
    pub fn from_center(rotation: RotationMatrix, center: Vec3) -> Self {
        CameraPose {
            rotation,
            translation: scale3(rotation.apply(center), -1.0),
        }
    }
}

/// Rotation-only extrinsics from a head orientation: the head sits at the
/// camera origin, so the translation is exactly zero.
pub fn head_to_pose(head: Vec3) -> Result<CameraPose> {
    Ok(CameraPose {
        rotation: axis_angle_to_rotation(AxisAngle(head))?,
        translation: [0.0; 3],
    })
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 64.0,
            fy: 64.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid intrinsics {self:?}")))
        }
    }

    /// The same camera sampled on a grid `factor` times coarser.
    pub fn downscaled(&self, factor: usize) -> Result<Intrinsics> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Precondition(format!(
                "image {}x{} not divisible by {factor}",
                self.width, self.height
            )));
        }
        let f = factor as f64;
        Ok(Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        })
    }

    /// Camera-frame ray (not normalized) through pixel coordinates `(x, y)`.
    pub fn unproject(&self, x: f64, y: f64) -> Vec3 {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0]
    }

    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        if p[2] <= Z_NEAR {
            return None;
        }
        Some([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }
}

/// Per-pixel Plücker rays `(d, m)`, stored `H x W x 6`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerRayMap {
    pub height: usize,
    pub width: usize,
    pub rays: Vec<f64>,
}

impl PluckerRayMap {
    pub fn ray(&self, i: usize, j: usize) -> ([f64; 3], [f64; 3]) {
        let o = (i * self.width + j) * 6;
        let r = &self.rays[o..o + 6];
        ([r[0], r[1], r[2]], [r[3], r[4], r[5]])
    }
}

/// World-frame rays through every pixel center of `k`, with moments about
/// the world origin.
pub fn plucker_map(pose: &CameraPose, k: &Intrinsics) -> Result<PluckerRayMap> {
    k.validate()?;
    let rt = pose.rotation.transpose();
    let rotation_only = pose.translation == [0.0; 3];
    let center = pose.center();
    let mut rays = Vec::with_capacity(k.height * k.width * 6);
    for i in 0..k.height {
        for j in 0..k.width {
            let cam = k.unproject(j as f64 + 0.5, i as f64 + 0.5);
            let d = rt.apply(cam);
            let d = scale3(d, 1.0 / norm(d));
            let m = if rotation_only { [0.0; 3] } else { cross(center, d) };
            rays.extend_from_slice(&d);
            rays.extend_from_slice(&m);
        }
    }
    Ok(PluckerRayMap {
        height: k.height,
        width: k.width,
        rays,
    })
}

/// Pinhole projection of camera-frame points. Points with `Z <= Z_NEAR` are
/// reported invisible and their pixel is NaN.
pub fn project_joints(points: &[Vec3], k: &Intrinsics) -> (Vec<[f64; 2]>, Vec<bool>) {
    points
        .iter()
        .map(|&p| match k.project(p) {
            Some(px) => (px, true),
            None => ([f64::NAN; 2], false),
        })
        .unzip()
}
