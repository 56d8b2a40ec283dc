//! Independent reference implementations shared by the integration and
//! acceptance tests. None of these call into the library's math.
#![allow(dead_code)]

pub type V3 = [f64; 3];
pub type M3 = [[f64; 3]; 3];

/// Unit quaternion `(w, x, y, z)` for a rotation of `|v|` about `v`.
pub fn quat_from_axis_angle(v: V3) -> [f64; 4] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let (s, c) = (0.5 * theta).sin_cos();
    [c, s * v[0] / theta, s * v[1] / theta, s * v[2] / theta]
}

pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix whose columns are `q e_i q*`.
pub fn quat_rotation(v: V3) -> M3 {
    let q = quat_from_axis_angle(v);
    let qc = [q[0], -q[1], -q[2], -q[3]];
    let mut m = [[0.0; 3]; 3];
    for col in 0..3 {
        let mut e = [0.0; 4];
        e[col + 1] = 1.0;
        let r = quat_mul(quat_mul(q, e), qc);
        for row in 0..3 {
            m[row][col] = r[row + 1];
        }
    }
    m
}

pub fn frob(a: &M3, b: &M3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s.sqrt()
}

/// Pinhole projection through a 3x4 homogeneous camera matrix `K [I | 0]`.
pub fn homogeneous_project(p: V3, fx: f64, fy: f64, cx: f64, cy: f64) -> [f64; 2] {
    let k = [[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]];
    let x = [p[0], p[1], p[2], 1.0];
    let h: Vec<f64> = k.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
    [h[0] / h[2], h[1] / h[2]]
}
