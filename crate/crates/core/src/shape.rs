//! Procedural vehicle-like solids with exact analytic signed distance
//! functions.
//!
//! A shape is a rounded-box body, an optional rounded-box cabin and up to four
//! y-axis cylinders (wheels), blended with an exponential smooth minimum. The
//! canonical frame has x forward, y left and z up; every generated shape fits
//! inside the ball of radius [`FamilyConfig::max_radius`] < 1.
//!
//! The smooth union `-ln(sum exp(-k d_i)) / k` is exactly 1-Lipschitz and
//! under-estimates the hard union by at most `ln(n) / k` for `n` primitives;
//! [`ProceduralShape::union_bound`] reports that bound.

use alloc::vec::Vec;

#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralShape {
    pub body_halfextents: Vec3,
    /// All-zero half-extents mean "no cabin".
    pub cabin_halfextents: Vec3,
    pub cabin_offset: Vec3,
    /// Zero radius means "no wheels".
    pub wheel_radius: f64,
    pub wheel_halfwidth: f64,
    pub wheel_positions: [Vec3; 4],
    pub corner_rounding: f64,
    pub smooth_union_k: f64,
}

/// Closed parameter interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &'static str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        if self.min > self.max {
            return Err(Error::InvalidRange {
                name,
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.min + (self.max - self.min) * rng.random::<f64>()
    }
}

/// Parameter ranges of the procedural family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyConfig {
    pub body_half_length: Range,
    pub body_half_width: Range,
    pub body_half_height: Range,
    /// Cabin half-length as a fraction of the body half-length.
    pub cabin_length_fraction: Range,
    pub cabin_half_height: Range,
    pub cabin_offset_x: Range,
    pub wheel_radius: Range,
    /// Cabin half-width as a fraction of the body half-width.
    pub cabin_width_fraction: f64,
    pub wheel_halfwidth: f64,
    /// Wheel x position as a fraction of the body half-length.
    pub wheelbase_fraction: f64,
    pub corner_rounding: f64,
    pub smooth_union_k: f64,
    /// Shapes are uniformly rescaled to fit this ball.
    pub max_radius: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            body_half_length: Range::new(0.72, 0.88),
            body_half_width: Range::new(0.30, 0.40),
            body_half_height: Range::new(0.11, 0.19),
            cabin_length_fraction: Range::new(0.40, 0.65),
            cabin_half_height: Range::new(0.09, 0.16),
            cabin_offset_x: Range::new(-0.20, 0.15),
            wheel_radius: Range::new(0.12, 0.18),
            cabin_width_fraction: 0.88,
            wheel_halfwidth: 0.07,
            wheelbase_fraction: 0.66,
            corner_rounding: 0.05,
            smooth_union_k: 40.0,
            max_radius: 0.9,
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        self.body_half_length.check("body_half_length")?;
        self.body_half_width.check("body_half_width")?;
        self.body_half_height.check("body_half_height")?;
        self.cabin_length_fraction.check("cabin_length_fraction")?;
        self.cabin_half_height.check("cabin_half_height")?;
        self.cabin_offset_x.check("cabin_offset_x")?;
        self.wheel_radius.check("wheel_radius")?;
        if self.body_half_length.min <= 0.0
            || self.body_half_width.min <= 0.0
            || self.body_half_height.min <= 0.0
        {
            return Err(Error::InvalidArgument(
                "body half-extents must be positive".into(),
            ));
        }
        if !(self.smooth_union_k > 0.0) {
            return Err(Error::InvalidArgument(
                "smooth_union_k must be positive".into(),
            ));
        }
        if !(self.max_radius > 0.0 && self.max_radius <= 1.0) {
            return Err(Error::InvalidArgument(
                "max_radius must lie in (0, 1]".into(),
            ));
        }
        if !(self.corner_rounding >= 0.0) {
            return Err(Error::InvalidArgument(
                "corner_rounding must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministically draws one member of the family.
pub fn make_shape(seed: u64, cfg: &FamilyConfig) -> Result<ProceduralShape> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bl = cfg.body_half_length.sample(&mut rng);
    let bw = cfg.body_half_width.sample(&mut rng);
    let bh = cfg.body_half_height.sample(&mut rng);
    let cl = cfg.cabin_length_fraction.sample(&mut rng) * bl;
    let ch = cfg.cabin_half_height.sample(&mut rng);
    let cx = cfg.cabin_offset_x.sample(&mut rng);
    let wr = cfg.wheel_radius.sample(&mut rng);

    let rounding = cfg.corner_rounding;
    let wx = cfg.wheelbase_fraction * bl;
    let wy = bw - 0.5 * cfg.wheel_halfwidth;
    let wz = -bh;
    let mut shape = ProceduralShape {
        body_halfextents: Vec3::new(bl, bw, bh),
        cabin_halfextents: Vec3::new(cl, cfg.cabin_width_fraction * bw, ch),
        cabin_offset: Vec3::new(cx, 0.0, bh + ch - rounding),
        wheel_radius: wr,
        wheel_halfwidth: cfg.wheel_halfwidth,
        wheel_positions: [
            Vec3::new(wx, wy, wz),
            Vec3::new(wx, -wy, wz),
            Vec3::new(-wx, wy, wz),
            Vec3::new(-wx, -wy, wz),
        ],
        corner_rounding: rounding,
        smooth_union_k: cfg.smooth_union_k,
    };
    let r = shape.bounding_radius();
    if r > cfg.max_radius {
        shape = shape.scaled(cfg.max_radius / r);
    }
    Ok(shape)
}

#[inline]
fn round_box(p: &Vec3, half: &Vec3, rounding: f64) -> f64 {
    let r = rounding.min(half.x).min(half.y).min(half.z).max(0.0);
    let q = p.abs() - half + Vec3::repeat(r);
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    outside + q.x.max(q.y).max(q.z).min(0.0) - r
}

/// Cylinder with its axis along y.
#[inline]
fn cylinder_y(p: &Vec3, radius: f64, halfwidth: f64) -> f64 {
    let dr = (p.x * p.x + p.z * p.z).sqrt() - radius;
    let dy = p.y.abs() - halfwidth;
    dr.max(dy).min(0.0) + (dr.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
}

impl ProceduralShape {
    /// The degenerate family member: a single sphere (a rounded box whose
    /// rounding equals its half-extent), no cabin, no wheels.
    pub fn sphere(radius: f64) -> Self {
        Self {
            body_halfextents: Vec3::repeat(radius),
            cabin_halfextents: Vec3::zeros(),
            cabin_offset: Vec3::zeros(),
            wheel_radius: 0.0,
            wheel_halfwidth: 0.0,
            wheel_positions: [Vec3::zeros(); 4],
            corner_rounding: radius,
            smooth_union_k: 40.0,
        }
    }

    pub fn has_cabin(&self) -> bool {
        self.cabin_halfextents.min() > 0.0
    }

    pub fn has_wheels(&self) -> bool {
        self.wheel_radius > 0.0 && self.wheel_halfwidth > 0.0
    }

    pub fn primitive_count(&self) -> usize {
        1 + usize::from(self.has_cabin()) + if self.has_wheels() { 4 } else { 0 }
    }

    /// Largest amount by which the smooth union undercuts the hard union.
    pub fn union_bound(&self) -> f64 {
        (self.primitive_count() as f64).ln() / self.smooth_union_k
    }

    /// Exact distances to each primitive (body, cabin, wheels).
    pub fn primitive_distances(&self, p: &Vec3, out: &mut [f64; 6]) -> usize {
        let mut n = 0;
        out[n] = round_box(p, &self.body_halfextents, self.corner_rounding);
        n += 1;
        if self.has_cabin() {
            out[n] = round_box(
                &(p - self.cabin_offset),
                &self.cabin_halfextents,
                self.corner_rounding,
            );
            n += 1;
        }
        if self.has_wheels() {
            for c in &self.wheel_positions {
                out[n] = cylinder_y(&(p - c), self.wheel_radius, self.wheel_halfwidth);
                n += 1;
            }
        }
        n
    }

    /// Signed distance in the canonical frame: negative inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let mut d = [0.0; 6];
        let n = self.primitive_distances(p, &mut d);
        if n == 1 {
            return d[0];
        }
        let m = d[..n].iter().copied().fold(f64::INFINITY, f64::min);
        let k = self.smooth_union_k;
        let s: f64 = d[..n].iter().map(|di| (-k * (di - m)).exp()).sum();
        m - s.ln() / k
    }

    /// Central-difference gradient of [`sdf`](Self::sdf).
    pub fn sdf_gradient(&self, p: &Vec3) -> Vec3 {
        let h = 1e-6;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            g[a] = (self.sdf(&(p + e)) - self.sdf(&(p - e))) / (2.0 * h);
        }
        g
    }

    /// Radius of a ball around the origin containing every primitive.
    pub fn bounding_radius(&self) -> f64 {
        let mut r = self.body_halfextents.norm();
        if self.has_cabin() {
            r = r.max((self.cabin_offset.abs() + self.cabin_halfextents).norm());
        }
        if self.has_wheels() {
            for c in &self.wheel_positions {
                let far = Vec3::new(
                    c.x.abs() + self.wheel_radius,
                    c.y.abs() + self.wheel_halfwidth,
                    c.z.abs() + self.wheel_radius,
                );
                r = r.max(far.norm());
            }
        }
        r
    }

    /// Uniformly rescaled copy (the smoothing sharpness is kept).
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            body_halfextents: self.body_halfextents * f,
            cabin_halfextents: self.cabin_halfextents * f,
            cabin_offset: self.cabin_offset * f,
            wheel_radius: self.wheel_radius * f,
            wheel_halfwidth: self.wheel_halfwidth * f,
            wheel_positions: self.wheel_positions.map(|c| c * f),
            corner_rounding: self.corner_rounding * f,
            smooth_union_k: self.smooth_union_k,
        }
    }

    /// Axis-aligned bounds `(lo, hi)` of the primitives.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = -self.body_halfextents;
        let mut hi = self.body_halfextents;
        if self.has_cabin() {
            lo = lo.inf(&(self.cabin_offset - self.cabin_halfextents));
            hi = hi.sup(&(self.cabin_offset + self.cabin_halfextents));
        }
        if self.has_wheels() {
            let e = Vec3::new(self.wheel_radius, self.wheel_halfwidth, self.wheel_radius);
            for c in &self.wheel_positions {
                lo = lo.inf(&(c - e));
                hi = hi.sup(&(c + e));
            }
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.body_halfextents
            .iter()
            .chain(self.cabin_halfextents.iter())
            .all(|v| v.is_finite())
            && self.wheel_radius.is_finite()
            && self.smooth_union_k.is_finite()
    }
}

/// Free-function form of [`ProceduralShape::sdf`].
pub fn oracle_sdf(shape: &ProceduralShape, p: &Vec3) -> f64 {
    shape.sdf(p)
}

const SHELL: f64 = 0.02;
const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_ITERS: usize = 30;

/// Newton projection onto the zero level set; `None` if it does not settle.
pub fn project_to_surface(shape: &ProceduralShape, p: &Vec3) -> Option<Vec3> {
    let mut q = *p;
    for _ in 0..PROJECTION_ITERS {
        let s = shape.sdf(&q);
        if s.abs() < PROJECTION_TOL {
            return Some(q);
        }
        let g = shape.sdf_gradient(&q);
        let gg = g.norm_squared();
        if !(gg > 1e-12) {
            return None;
        }
        q -= g * (s / gg);
    }
    (shape.sdf(&q).abs() < PROJECTION_TOL).then_some(q)
}

/// Approximately area-uniform surface samples: uniform rejection sampling of
/// the thin shell `|sdf| < 0.02` followed by Newton projection. Samples whose
/// projection does not converge are discarded and redrawn.
pub fn sample_surface_points(shape: &ProceduralShape, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "surface sample count must be >= 1".into(),
        ));
    }
    let (lo, hi) = shape.aabb();
    let lo = lo - Vec3::repeat(SHELL);
    let hi = hi + Vec3::repeat(SHELL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let budget = n.saturating_mul(200_000).max(1_000_000);
    for _ in 0..budget {
        let p = Vec3::new(
            lo.x + (hi.x - lo.x) * rng.random::<f64>(),
            lo.y + (hi.y - lo.y) * rng.random::<f64>(),
            lo.z + (hi.z - lo.z) * rng.random::<f64>(),
        );
        if shape.sdf(&p).abs() >= SHELL {
            continue;
        }
        if let Some(q) = project_to_surface(shape, &p) {
            if (q - p).norm() < 2.0 * SHELL {
                out.push(q);
                if out.len() == n {
                    return Ok(out);
                }
            }
        }
    }
    Err(Error::Degenerate(
        "surface sampling could not find enough shell points",
    ))
}

/// One labelled training sample for the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfSample {
    pub point: Vec3,
    pub sdf: f64,
}

/// Half-width of the cube in which the uniform training samples are drawn.
pub const TRAINING_CUBE: f64 = 1.1;

/// Decoder training pairs: a `near_fraction` share of surface samples
/// perturbed by isotropic Gaussian noise of scale `near_sigma`, the remainder
/// uniform in `[-1.1, 1.1]^3`; every point labelled with the oracle SDF. The
/// near samples come first.
pub fn sample_sdf_training_pairs(
    shape: &ProceduralShape,
    n: usize,
    seed: u64,
    near_fraction: f64,
    near_sigma: f64,
) -> Result<Vec<SdfSample>> {
    if !(0.0..=1.0).contains(&near_fraction) {
        return Err(Error::InvalidArgument(
            "near_fraction must lie in [0, 1]".into(),
        ));
    }
    if !(near_sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "near_sigma must be non-negative".into(),
        ));
    }
    let n_near = (n as f64 * near_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    if n_near > 0 {
        let surface = sample_surface_points(shape, n_near, rng.random())?;
        for p in surface {
            let e = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let q = p + e * near_sigma;
            out.push(SdfSample {
                point: q,
                sdf: shape.sdf(&q),
            });
        }
    }
    while out.len() < n {
        let q = Vec3::new(
            rng.random_range(-TRAINING_CUBE..TRAINING_CUBE),
            rng.random_range(-TRAINING_CUBE..TRAINING_CUBE),
            rng.random_range(-TRAINING_CUBE..TRAINING_CUBE),
        );
        out.push(SdfSample {
            point: q,
            sdf: shape.sdf(&q),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_oracle() {
        let s = ProceduralShape::sphere(1.0);
        assert_eq!(s.sdf(&Vec3::zeros()), -1.0);
        let p = Vec3::new(0.3, -0.4, 0.5).normalize();
        assert!(s.sdf(&p).abs() < 1e-12);
        assert!((s.sdf(&(p * 2.0)) - 1.0).abs() < 1e-12);
        assert_eq!(s.union_bound(), 0.0);
    }

    #[test]
    fn make_shape_is_deterministic_and_seed_sensitive() {
        let cfg = FamilyConfig::default();
        let a = make_shape(0, &cfg).unwrap();
        let b = make_shape(0, &cfg).unwrap();
        let c = make_shape(1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.primitive_count(), 6);
    }

    #[test]
    fn rejects_inverted_ranges() {
        let cfg = FamilyConfig {
            wheel_radius: Range::new(0.2, 0.1),
            ..FamilyConfig::default()
        };
        assert!(matches!(
            make_shape(0, &cfg),
            Err(Error::InvalidRange {
                name: "wheel_radius",
                ..
            })
        ));
    }

    #[test]
    fn shapes_fit_the_unit_ball() {
        // oracle SDF on a dense grid of the unit sphere must be non-negative
        let cfg = FamilyConfig::default();
        let mut dirs = Vec::new();
        for i in 0..40 {
            for j in 0..80 {
                let th = core::f64::consts::PI * (i as f64 + 0.5) / 40.0;
                let ph = 2.0 * core::f64::consts::PI * j as f64 / 80.0;
                dirs.push(Vec3::new(
                    th.sin() * ph.cos(),
                    th.sin() * ph.sin(),
                    th.cos(),
                ));
            }
        }
        for seed in 0..100 {
            let s = make_shape(seed, &cfg).unwrap();
            assert!(s.bounding_radius() <= cfg.max_radius + 1e-12);
            for d in &dirs {
                assert!(
                    s.sdf(d) >= 0.0,
                    "seed {seed} pierces the unit ball at {d:?}"
                );
            }
        }
    }

    #[test]
    fn surface_samples_lie_on_the_surface() {
        let s = make_shape(3, &FamilyConfig::default()).unwrap();
        let pts = sample_surface_points(&s, 1000, 9).unwrap();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().all(|p| s.sdf(p).abs() < 1e-6));
        assert_eq!(pts, sample_surface_points(&s, 1000, 9).unwrap());
        assert!(sample_surface_points(&s, 0, 9).is_err());
    }

    #[test]
    fn unit_sphere_surface_mean_radius() {
        let s = ProceduralShape::sphere(1.0);
        let pts = sample_surface_points(&s, 10_000, 4).unwrap();
        let mean = pts.iter().map(|p| p.norm()).sum::<f64>() / pts.len() as f64;
        assert!((mean - 1.0).abs() < 1e-4);
        // area uniformity: each octant holds about 1/8 of the samples
        let mut counts = [0usize; 8];
        for p in &pts {
            counts[usize::from(p.x > 0.0)
                | usize::from(p.y > 0.0) << 1
                | usize::from(p.z > 0.0) << 2] += 1;
        }
        for c in counts {
            assert!((c as f64 - 1250.0).abs() < 5.0 * 33.1, "{counts:?}");
        }
    }

    #[test]
    fn training_pairs_are_labelled_by_the_oracle() {
        let s = make_shape(5, &FamilyConfig::default()).unwrap();
        let pairs = sample_sdf_training_pairs(&s, 500, 1, 0.6, 0.01).unwrap();
        assert_eq!(pairs.len(), 500);
        assert!(pairs.iter().all(|q| q.sdf == s.sdf(&q.point)));

        let uniform = sample_sdf_training_pairs(&s, 300, 1, 0.0, 0.01).unwrap();
        assert!(uniform
            .iter()
            .all(|q| q.point.iter().all(|c| c.abs() <= TRAINING_CUBE)));
        assert!(sample_sdf_training_pairs(&s, 10, 1, 1.5, 0.01).is_err());
    }

    #[test]
    fn near_samples_stay_within_four_sigma() {
        let s = make_shape(7, &FamilyConfig::default()).unwrap();
        let pairs = sample_sdf_training_pairs(&s, 2000, 2, 1.0, 0.01).unwrap();
        let close = pairs.iter().filter(|q| q.sdf.abs() < 0.04).count();
        assert!(close as f64 >= 0.95 * pairs.len() as f64, "{close}");
    }
}
