//! The 7-DoF similarity pose mapping world (camera) points into the canonical
//! object frame, its tangent-space retraction, and PCA initialisation.

use nalgebra::{SMatrix, SymmetricEigen, UnitQuaternion};
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::{frame_from_heading, plane_basis, skew};
use crate::{Error, Mat3, Result, Vec3};

/// Number of pose tangent coordinates: rotation (3), translation (3),
/// log-scale (1).
pub const POSE_DIM: usize = 7;

pub type PoseJacobian = SMatrix<f64, 3, POSE_DIM>;

/// `p_obj = exp(log_scale) * R * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub log_scale: f64,
}

impl Default for SimilarityPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityPose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
            log_scale: 0.0,
        }
    }

    /// Pose whose inverse places the object (origin, axes `object_to_world`,
    /// uniform `scale`) in the world.
    pub fn from_placement(object_to_world: &Mat3, position: &Vec3, scale: f64) -> Self {
        let r = object_to_world.transpose();
        let rotation = UnitQuaternion::from_matrix(&r);
        let s = 1.0 / scale;
        Self {
            rotation,
            translation: -(r * position) * s,
            log_scale: s.ln(),
        }
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    #[inline]
    pub fn rotation_matrix(&self) -> Mat3 {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// World point to object frame.
    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p * self.scale() + self.translation
    }

    /// Object-frame point back to the world.
    #[inline]
    pub fn inverse_apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix().transpose() * (p - self.translation) / self.scale()
    }

    /// World position of the object origin.
    pub fn object_position(&self) -> Vec3 {
        self.inverse_apply(&Vec3::zeros())
    }

    /// Derivative of `apply(p)` with respect to the tangent `[dw, dt, dlog_s]`
    /// at zero, for the right-multiplied rotation increment `R exp([dw]x)`.
    pub fn point_jacobian(&self, p: &Vec3) -> PoseJacobian {
        let r = self.rotation_matrix();
        let s = self.scale();
        let mut j = PoseJacobian::zeros();
        let rot = -(r * skew(p)) * s;
        let rp = r * p * s;
        for row in 0..3 {
            for c in 0..3 {
                j[(row, c)] = rot[(row, c)];
            }
            j[(row, 3 + row)] = 1.0;
            j[(row, 6)] = rp[row];
        }
        j
    }

    /// Applies a tangent increment and renormalises the quaternion.
    pub fn retract(&self, delta: &[f64]) -> Self {
        debug_assert!(delta.len() >= POSE_DIM);
        let dw = Vec3::new(delta[0], delta[1], delta[2]);
        let q = self.rotation * UnitQuaternion::from_scaled_axis(dw);
        Self {
            rotation: UnitQuaternion::new_normalize(q.into_inner()),
            translation: self.translation + Vec3::new(delta[3], delta[4], delta[5]),
            log_scale: self.log_scale + delta[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.log_scale.is_finite()
    }
}

/// Canonical-frame statistics of the reference shape used to turn a point
/// cloud's centroid and extent into a translation and a scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseReference {
    /// Centroid of the reference shape's observed surface points (object frame).
    pub centroid: Vec3,
    /// Half extent of the reference shape along the object x (heading) axis.
    pub half_length: f64,
}

impl Default for PoseReference {
    fn default() -> Self {
        Self {
            centroid: Vec3::zeros(),
            half_length: 0.8,
        }
    }
}

/// Initial pose from principal component analysis of an object point cloud.
///
/// The heading is the dominant principal direction of the points projected on
/// the ground plane (orthogonal to `up`); its 180 degree ambiguity is resolved
/// by the sign of the third moment along that direction. Roll and pitch align
/// `up` with the object z axis, the scale is the ratio of the reference
/// half-length to the cloud's half extent along the heading, and the
/// translation sends the cloud centroid onto the reference centroid.
pub fn init_pose_pca(
    points: &[Vec3],
    up: &Vec3,
    reference: &PoseReference,
) -> Result<SimilarityPose> {
    if points.len() < 4 {
        return Err(Error::RankDeficient);
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut ev: [f64; 3] = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    if !(ev[0] > 0.0) || ev[1] <= 1e-10 * ev[0] {
        return Err(Error::RankDeficient);
    }

    let up = up.normalize();
    let (a, b) = plane_basis(&up);
    let (mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - centroid;
        let (x, y) = (d.dot(&a), d.dot(&b));
        caa += x * x;
        cbb += y * y;
        cab += x * y;
    }
    let psi = 0.5 * (2.0 * cab).atan2(caa - cbb);
    let mut heading = a * psi.cos() + b * psi.sin();
    let third: f64 = points
        .iter()
        .map(|p| (p - centroid).dot(&heading).powi(3))
        .sum();
    if third < 0.0 {
        heading = -heading;
    }

    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = (p - centroid).dot(&heading);
            (lo.min(t), hi.max(t))
        });
    let half = 0.5 * (hi - lo);
    if !(half > 0.0) {
        return Err(Error::RankDeficient);
    }
    let s = reference.half_length / half;
    let r = frame_from_heading(&heading, &up).transpose();
    let translation = reference.centroid - r * centroid * s;
    Ok(SimilarityPose {
        rotation: UnitQuaternion::from_matrix(&r),
        translation,
        log_scale: s.ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;

    fn numeric_jacobian(pose: &SimilarityPose, p: &Vec3) -> PoseJacobian {
        let h = 1e-6;
        let mut j = PoseJacobian::zeros();
        for k in 0..POSE_DIM {
            let mut d = [0.0; POSE_DIM];
            d[k] = h;
            let a = pose.retract(&d).apply(p);
            d[k] = -h;
            let b = pose.retract(&d).apply(p);
            j.set_column(k, &((a - b) / (2.0 * h)));
        }
        j
    }

    #[test]
    fn point_jacobian_matches_retraction() {
        let pose = SimilarityPose {
            rotation: UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
            translation: Vec3::new(0.1, -0.4, 2.0),
            log_scale: 0.25,
        };
        let p = Vec3::new(0.7, -0.3, 1.4);
        let diff = pose.point_jacobian(&p) - numeric_jacobian(&pose, &p);
        assert!(diff.abs().max() < 1e-8, "{diff}");
    }

    #[test]
    fn apply_and_inverse_round_trip() {
        let pose = SimilarityPose::from_placement(&rot_z(0.4), &Vec3::new(3.0, 1.0, 0.5), 2.0);
        let p = Vec3::new(-0.2, 0.9, 0.1);
        assert!((pose.inverse_apply(&pose.apply(&p)) - p).norm() < 1e-14);
        assert!((pose.object_position() - Vec3::new(3.0, 1.0, 0.5)).norm() < 1e-14);
        assert!((pose.scale() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn retraction_keeps_unit_quaternion() {
        let mut pose = SimilarityPose::identity();
        for i in 0..1000 {
            let f = i as f64 * 0.37;
            pose = pose.retract(&[f.sin() * 0.3, f.cos() * 0.2, 0.1, 0.0, 0.0, 0.0, 0.0]);
            assert!((pose.rotation.coords.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_rejects_collinear_points() {
        let pts: alloc::vec::Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            init_pose_pca(&pts, &Vec3::z(), &PoseReference::default()),
            Err(Error::RankDeficient)
        );
        assert!(init_pose_pca(&pts[..3], &Vec3::z(), &PoseReference::default()).is_err());
    }

    #[test]
    fn axis_aligned_cloud_gives_identity_yaw() {
        // a 2 x 1 x 0.5 box lattice; the heading sign follows the skew
        let mut pts = alloc::vec::Vec::new();
        for i in 0..=20 {
            for j in 0..=10 {
                for k in 0..=5 {
                    let x = -1.0 + 0.1 * i as f64;
                    pts.push(Vec3::new(x, -0.5 + 0.1 * j as f64, -0.25 + 0.1 * k as f64));
                    if x > 0.5 {
                        pts.push(Vec3::new(x, -0.5 + 0.1 * j as f64, -0.25 + 0.1 * k as f64));
                    }
                }
            }
        }
        let pose = init_pose_pca(
            &pts,
            &Vec3::z(),
            &PoseReference {
                centroid: Vec3::zeros(),
                half_length: 1.0,
            },
        )
        .unwrap();
        let r = pose.rotation_matrix();
        // heading is +x or -x; up stays up
        assert!((r[(0, 0)].abs() - 1.0).abs() < 1e-9, "{r}");
        assert!((r[(2, 2)] - 1.0).abs() < 1e-12, "{r}");
        assert!((pose.log_scale).abs() < 1e-12);
    }
}
