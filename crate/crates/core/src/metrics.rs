//! Chamfer distances, oriented (yaw-only) boxes and 3D IoU.

use alloc::vec::Vec;

use nalgebra::{UnitQuaternion, Vector2};
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::{frame_from_heading, plane_basis, wrap_angle};
use crate::kdtree::KdTree;
use crate::{Error, Mat3, Result, Vec3};

type P2 = Vector2<f64>;

/// Mean squared distance from each point of `a` to its nearest point in `b`.
pub fn chamfer_unidirectional(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer point set"));
    }
    let tree = KdTree::new(b);
    let sum: f64 = a
        .iter()
        .map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `UCD(a, b) + UCD(b, a)`.
pub fn chamfer_bidirectional(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(chamfer_unidirectional(a, b)? + chamfer_unidirectional(b, a)?)
}

/// A gravity-aligned box: `rotation` maps box axes to world axes and its z
/// column is the up direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3 {
    pub center: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub half_extents: Vec3,
}

impl OrientedBox3 {
    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            center,
            rotation: UnitQuaternion::identity(),
            half_extents,
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        let local = self.rotation.inverse() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i] + tol)
    }

    pub fn up(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    /// Footprint corners (counter-clockwise about `up`) in the plane basis of `up`.
    fn footprint(&self, basis: &(Vec3, Vec3)) -> [P2; 4] {
        let ax = self.rotation * Vec3::x() * self.half_extents.x;
        let ay = self.rotation * Vec3::y() * self.half_extents.y;
        let c = self.center;
        let proj = |p: Vec3| P2::new(p.dot(&basis.0), p.dot(&basis.1));
        [
            proj(c - ax - ay),
            proj(c + ax - ay),
            proj(c + ax + ay),
            proj(c - ax + ay),
        ]
    }
}

fn cross2(a: &P2, b: &P2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| cross2(&poly[i], &poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out: Vec<P2> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge = b - a;
        let side = |p: &P2| cross2(&edge, &(p - a));
        let input = core::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                out.push(p + (q - p) * (sp / (sp - sq)));
            }
        }
    }
    out
}

/// Intersection over union of two boxes sharing the up axis of `a`: footprint
/// polygon intersection times the vertical overlap.
pub fn iou3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let up = a.up();
    let basis = plane_basis(&up);
    let (mut pa, mut pb) = (a.footprint(&basis), b.footprint(&basis));
    for poly in [&mut pa, &mut pb] {
        if polygon_area(poly) < 0.0 {
            poly.reverse();
        }
    }
    let inter = polygon_area(&clip_convex(&pa, &pb)).max(0.0);
    let (ca, cb) = (a.center.dot(&up), b.center.dot(&up));
    let overlap = ((ca + a.half_extents.z).min(cb + b.half_extents.z)
        - (ca - a.half_extents.z).max(cb - b.half_extents.z))
    .max(0.0);
    let vi = inter * overlap;
    let union = a.volume() + b.volume() - vi;
    if union <= 0.0 {
        return 0.0;
    }
    (vi / union).clamp(0.0, 1.0)
}

/// Andrew's monotone chain; counter-clockwise without collinear points.
fn convex_hull(points: &[P2]) -> Vec<P2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    fn push(chain: &mut Vec<P2>, p: P2) {
        while chain.len() >= 2
            && cross2(
                &(chain[chain.len() - 1] - chain[chain.len() - 2]),
                &(p - chain[chain.len() - 2]),
            ) <= 0.0
        {
            chain.pop();
        }
        chain.push(p);
    }
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for p in &pts {
        push(&mut lower, *p);
    }
    for p in pts.iter().rev() {
        push(&mut upper, *p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Gravity-aligned box around `points`. The yaw is that of the minimum-area
/// rectangle enclosing the ground-plane projection (one hull edge is always
/// flush with the optimum), reduced to `[0, 90)` degrees; extents are the
/// min/max along the resulting axes.
pub fn fit_oriented_box(points: &[Vec3], up: &Vec3) -> Result<OrientedBox3> {
    if points.is_empty() {
        return Err(Error::Empty("box points"));
    }
    let up = up.normalize();
    let basis = plane_basis(&up);
    let flat: Vec<P2> = points
        .iter()
        .map(|p| P2::new(p.dot(&basis.0), p.dot(&basis.1)))
        .collect();
    let hull = convex_hull(&flat);
    if hull.len() < 3 {
        return Err(Error::Degenerate(
            "ground-plane footprint is a point or a segment",
        ));
    }
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        let theta = wrap_angle(e.y.atan2(e.x), core::f64::consts::FRAC_PI_2);
        let theta = if theta < 0.0 {
            theta + core::f64::consts::FRAC_PI_2
        } else {
            theta
        };
        let (s, c) = theta.sin_cos();
        let (mut lo, mut hi) = (P2::repeat(f64::INFINITY), P2::repeat(f64::NEG_INFINITY));
        for p in &hull {
            let q = P2::new(c * p.x + s * p.y, -s * p.x + c * p.y);
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let area = (hi - lo).product();
        if area < best.0 * (1.0 - 1e-12) {
            best = (area, theta);
        }
    }
    let (s, c) = best.1.sin_cos();
    let heading = basis.0 * c + basis.1 * s;
    let r: Mat3 = frame_from_heading(&heading, &up);
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in points {
        let q = r.transpose() * p;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let half = (hi - lo) * 0.5;
    if half.min() <= 1e-12 * half.max().max(1e-300) {
        return Err(Error::Degenerate("points are planar"));
    }
    Ok(OrientedBox3 {
        center: r * ((hi + lo) * 0.5),
        rotation: UnitQuaternion::from_matrix(&r),
        half_extents: half,
    })
}

/// `(median, mean, population std)`; `None` for an empty slice.
pub fn summary_stats(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Some((median, mean, var.sqrt()))
}
