//! Small 3D helpers shared by the renderer, the pose code and the box fitter.

#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;

use crate::{Mat3, Vec3};

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orthonormal basis `(a, b)` spanning the plane orthogonal to `n` (unit),
/// such that `(a, b, n)` is right-handed.
pub fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let a = (helper - n * n.dot(&helper)).normalize();
    let b = n.cross(&a);
    (a, b)
}

/// Rotation whose columns are `(heading, up x heading, up)`: maps object axes
/// (x forward, z up) to world directions.
pub fn frame_from_heading(heading: &Vec3, up: &Vec3) -> Mat3 {
    let ez = up.normalize();
    let ex = (heading - ez * ez.dot(heading)).normalize();
    let ey = ez.cross(&ex);
    Mat3::from_columns(&[ex, ey, ez])
}

/// Rotation about +z by `yaw` radians.
pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Wraps an angle into `(-period/2, period/2]`.
pub fn wrap_angle(a: f64, period: f64) -> f64 {
    let mut r = a - period * (a / period).round();
    if r <= -period / 2.0 {
        r += period;
    }
    r
}

/// Ray/axis-aligned-box slab test. Returns the parametric entry and exit
/// distances when the ray `o + t d` hits the box `[lo, hi]`.
pub fn ray_aabb(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            core::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 < t1).then_some((t0, t1))
}
