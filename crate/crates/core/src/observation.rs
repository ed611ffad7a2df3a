//! Measurement residuals over the `(w, pose)` tangent: the SDF surface term,
//! the silhouette term built on probabilistic ray termination, and the
//! rendered-depth term.
//!
//! Tangent layout: `[w (16) | rotation (3) | translation (3) | log-scale (1)]`.
//! Along a ray the decoder value is converted to world units (divided by the
//! object scale) so that the transition band `sigma` is one sampling step of
//! the ray.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::SVector;
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{DecoderEval, DecoderWeights, INPUT_DIM};
use crate::flow::{FlowWeights, Mat16, PreparedFlow};
use crate::pose::SimilarityPose;
use crate::render::{ray_object_box, DepthTag, FrameObservation};
use crate::{Code, Error, Result, Vec3, LATENT_DIM, TANGENT_DIM};

pub type Tangent = SVector<f64, TANGENT_DIM>;

/// Guard added under the square root of mask costs.
pub const MASK_EPS: f64 = 1e-12;
/// Rows per batched decoder pass.
const CHUNK: usize = 512;

/// How the optimised vector `w` becomes the decoder code `z`.
pub enum LatentMap<'a> {
    /// `z = G(w)` through the trained flow.
    Flow(PreparedFlow<'a>),
    /// Flow bypassed: `z = w`.
    Identity,
}

impl LatentMap<'_> {
    pub fn eval(&self, w: &Code) -> (Code, Mat16) {
        match self {
            Self::Flow(f) => {
                let e = f.eval(w);
                (e.z, e.jacobian)
            }
            Self::Identity => (*w, Mat16::identity()),
        }
    }
}

/// Decoder plus latent map: the full shape model `s = F(p, z(w))`.
pub struct ShapeModel<'a> {
    pub decoder: &'a DecoderWeights,
    pub latent: LatentMap<'a>,
}

impl<'a> ShapeModel<'a> {
    pub fn with_flow(decoder: &'a DecoderWeights, flow: &'a FlowWeights) -> Self {
        Self {
            decoder,
            latent: LatentMap::Flow(flow.prepare()),
        }
    }

    pub fn bypass(decoder: &'a DecoderWeights) -> Self {
        Self {
            decoder,
            latent: LatentMap::Identity,
        }
    }
}

/// Decoder values and `(z, p)` gradients for many points at one code.
struct Field<'a> {
    ev: DecoderEval<'a>,
    z: Code,
}

impl<'a> Field<'a> {
    fn new(decoder: &'a DecoderWeights, z: Code) -> Self {
        let mut ev = decoder.evaluator();
        ev.reserve(CHUNK);
        Self { ev, z }
    }

    fn values(&mut self, pts: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(CHUNK) {
            for (r, p) in chunk.iter().enumerate() {
                self.ev.set_input(r, &self.z, p);
            }
            out.extend_from_slice(self.ev.forward_batch(chunk.len()));
        }
        out
    }

    /// Per point `(s, ds/dz, ds/dp)`.
    fn gradients(&mut self, pts: &[Vec3]) -> Vec<(f64, Code, Vec3)> {
        let mut out = Vec::with_capacity(pts.len());
        let ones = [1.0; CHUNK];
        let mut g = vec![0.0; CHUNK * INPUT_DIM];
        for chunk in pts.chunks(CHUNK) {
            let n = chunk.len();
            for (r, p) in chunk.iter().enumerate() {
                self.ev.set_input(r, &self.z, p);
            }
            let vals = self.ev.forward_batch(n).to_vec();
            self.ev
                .backward_batch(&ones[..n], None, Some(&mut g[..n * INPUT_DIM]));
            for r in 0..n {
                let row = &g[r * INPUT_DIM..(r + 1) * INPUT_DIM];
                out.push((
                    vals[r],
                    Code::from_column_slice(&row[..LATENT_DIM]),
                    Vec3::new(row[LATENT_DIM], row[LATENT_DIM + 1], row[LATENT_DIM + 2]),
                ));
            }
        }
        out
    }
}

/// Tangent row of `F(pose(p), z(w))` given the decoder gradients at `p_obj`.
#[inline]
fn tangent_row(gz: &Code, gp: &Vec3, jz: &Mat16, pose: &SimilarityPose, p_world: &Vec3) -> Tangent {
    let mut row = Tangent::zeros();
    let dw = jz.transpose() * gz;
    row.fixed_rows_mut::<LATENT_DIM>(0).copy_from(&dw);
    let jp = pose.point_jacobian(p_world);
    let dpose = jp.transpose() * gp;
    row.fixed_rows_mut::<7>(LATENT_DIM).copy_from(&dpose);
    row
}

/// Residuals and Jacobian rows of one term; `loss` excludes numerical guards.
#[derive(Debug, Clone, PartialEq)]
pub struct TermOutput {
    pub loss: f64,
    pub residuals: Vec<f64>,
    pub jacobian: Vec<Tangent>,
}

impl TermOutput {
    pub fn empty() -> Self {
        Self {
            loss: 0.0,
            residuals: Vec::new(),
            jacobian: Vec::new(),
        }
    }
}

fn check_state(w: &Code, pose: &SimilarityPose) -> Result<()> {
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("normalized code"));
    }
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose"));
    }
    Ok(())
}

/// Mean squared decoder value at the observed points:
/// `residual_k = F(pose(p_k), z(w)) / sqrt(N)`.
pub fn surface_loss(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    points: &[Vec3],
) -> Result<TermOutput> {
    if points.is_empty() {
        return Err(Error::Empty("surface points"));
    }
    check_state(w, pose)?;
    let (z, jz) = model.latent.eval(w);
    let obj: Vec<Vec3> = points.iter().map(|p| pose.apply(p)).collect();
    let grads = Field::new(model.decoder, z).gradients(&obj);
    let inv = 1.0 / (points.len() as f64).sqrt();
    let mut out = TermOutput {
        loss: 0.0,
        residuals: Vec::with_capacity(points.len()),
        jacobian: Vec::with_capacity(points.len()),
    };
    for (p, (s, gz, gp)) in points.iter().zip(&grads) {
        let r = s * inv;
        out.loss += r * r;
        out.residuals.push(r);
        out.jacobian.push(tangent_row(gz, gp, &jz, pose, p) * inv);
    }
    Ok(out)
}

/// Surface loss value only.
pub fn surface_loss_value(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    points: &[Vec3],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("surface points"));
    }
    check_state(w, pose)?;
    let (z, _) = model.latent.eval(w);
    let obj: Vec<Vec3> = points.iter().map(|p| pose.apply(p)).collect();
    let vals = Field::new(model.decoder, z).values(&obj);
    let inv = 1.0 / (points.len() as f64).sqrt();
    Ok(vals.iter().map(|s| (s * inv) * (s * inv)).sum())
}

/// Probability that a sample with signed distance `s` is empty: a linear ramp
/// from 0 at `-sigma` to 1 at `sigma`.
#[inline]
pub fn empty_prob(s: f64, sigma: f64) -> f64 {
    (0.5 + s / (2.0 * sigma)).clamp(0.0, 1.0)
}

/// `(e, de/ds)`; the derivative is zero outside the open band.
#[inline]
pub fn empty_prob_grad(s: f64, sigma: f64) -> (f64, f64) {
    if s.abs() < sigma {
        (0.5 + s / (2.0 * sigma), 0.5 / sigma)
    } else {
        (empty_prob(s, sigma), 0.0)
    }
}

/// `p_i = (1 - e_i) prod_{j<i} e_j` for every sample, then the escape
/// probability `prod_j e_j` as the last entry.
pub fn termination_distribution(e: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(e.len() + 1);
    let mut acc = 1.0;
    for &ei in e {
        p.push((1.0 - ei) * acc);
        acc *= ei;
    }
    p.push(acc);
    p
}

/// `sum_i p_i d_i + p_escape d_escape`.
pub fn rendered_depth(d: &[f64], p: &[f64], d_escape: f64) -> f64 {
    debug_assert_eq!(p.len(), d.len() + 1);
    d.iter().zip(p).map(|(d, p)| d * p).sum::<f64>() + p[d.len()] * d_escape
}

/// Expected mask penalty of a ray: the escape probability for a ray inside the
/// mask (`outside = false`) and the hit probability for one outside it.
#[inline]
pub fn mask_cost(escape: f64, outside: bool) -> f64 {
    if outside {
        1.0 - escape
    } else {
        escape
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayConfig {
    /// Samples per ray.
    pub samples: usize,
    /// Upper bound on mask rays (`Omega_M` and `Omega_B` pixels) per frame.
    pub budget: usize,
    /// Half side of the object-frame box clipping each ray.
    pub box_half: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            budget: 256,
            box_half: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub pixel: (u32, u32),
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub d_min: f64,
    pub d_max: f64,
    pub samples: usize,
    /// `Some(m_r)` for rays in the mask term: `false` through mask pixels,
    /// `true` through in-box background pixels.
    pub outside_mask: Option<bool>,
    /// Target depth for rays in the depth term (`d_max` for background).
    pub depth: Option<f64>,
}

impl Ray {
    /// Sampling step; also the width of the emptiness ramp.
    pub fn step(&self) -> f64 {
        (self.d_max - self.d_min) / (self.samples - 1) as f64
    }

    pub fn sample_depth(&self, i: usize) -> f64 {
        self.d_min + i as f64 * self.step()
    }

    pub fn escape_depth(&self) -> f64 {
        self.d_max
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayBundle {
    pub rays: Vec<Ray>,
}

impl RayBundle {
    pub fn mask_count(&self) -> usize {
        self.rays
            .iter()
            .filter(|r| r.outside_mask.is_some())
            .count()
    }

    pub fn depth_count(&self) -> usize {
        self.rays.iter().filter(|r| r.depth.is_some()).count()
    }
}

/// Selects the rays of one frame: up to `budget` mask rays split between mask
/// and background pixels in proportion to their counts, plus every measured
/// surface depth pixel. Each ray is clipped to the object box at `pose`;
/// rays missing the box are skipped.
pub fn build_rays(
    frame: &FrameObservation,
    pose: &SimilarityPose,
    cfg: &RayConfig,
    seed: u64,
) -> Result<RayBundle> {
    if cfg.budget == 0 {
        return Err(Error::InvalidArgument(
            "ray budget must be at least 1".into(),
        ));
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument(
            "rays need at least 2 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = frame.mask_pixels();
    let background = frame.background_pixels();
    let total = inside.len() + background.len();
    let (n_in, n_bg) = if cfg.budget >= total {
        (inside.len(), background.len())
    } else {
        let n_in = ((cfg.budget as f64 * inside.len() as f64 / total as f64).round() as usize)
            .min(inside.len());
        (n_in, (cfg.budget - n_in).min(background.len()))
    };
    let mut picks: Vec<((u32, u32), Option<bool>, Option<f64>)> = Vec::new();
    let mut sel = index::sample(&mut rng, inside.len(), n_in).into_vec();
    sel.sort_unstable();
    picks.extend(sel.into_iter().map(|i| (inside[i], Some(false), None)));
    let mut sel = index::sample(&mut rng, background.len(), n_bg).into_vec();
    sel.sort_unstable();
    picks.extend(
        sel.into_iter()
            .map(|i| (background[i], Some(true), Some(f64::NAN))),
    );
    for dp in frame
        .depth_pixels
        .iter()
        .filter(|d| d.tag == DepthTag::Surface)
    {
        match picks.iter_mut().find(|p| p.0 == (dp.u, dp.v)) {
            Some(p) => p.2 = Some(dp.depth),
            None => picks.push(((dp.u, dp.v), None, Some(dp.depth))),
        }
    }
    let mut rays = Vec::with_capacity(picks.len());
    for ((u, v), outside, depth) in picks {
        let (origin, dir) = frame.camera.pixel_ray(u, v);
        let Some((t0, t1)) = ray_object_box(pose, &origin, &dir, cfg.box_half) else {
            continue;
        };
        let d_min = t0.max(1e-6);
        if !(t1 > d_min) {
            continue;
        }
        // background pixels have no return: their target is the escape depth
        let depth = depth.map(|d| if d.is_nan() { t1 } else { d });
        rays.push(Ray {
            pixel: (u, v),
            origin,
            dir,
            d_min,
            d_max: t1,
            samples: cfg.samples,
            outside_mask: outside,
            depth,
        });
    }
    Ok(RayBundle { rays })
}

/// Escape probability and rendered depth of one ray with their tangent rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RayEval {
    pub escape: f64,
    pub depth: f64,
    pub d_escape: Tangent,
    pub d_depth: Tangent,
}

/// Evaluates every ray of a bundle at `(w, pose)`.
pub fn evaluate_rays(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    rays: &RayBundle,
) -> Result<Vec<RayEval>> {
    evaluate_rays_with(model, w, pose, rays, true)
}

/// As [`evaluate_rays`]; with `jacobian = false` the tangent rows are left at
/// zero and no backward pass runs.
pub fn evaluate_rays_with(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    rays: &RayBundle,
    jacobian: bool,
) -> Result<Vec<RayEval>> {
    check_state(w, pose)?;
    let (z, jz) = model.latent.eval(w);
    let mut field = Field::new(model.decoder, z);
    let inv_scale = 1.0 / pose.scale();

    let mut world = Vec::new();
    let mut obj = Vec::new();
    for ray in &rays.rays {
        for i in 0..ray.samples {
            let p = ray.origin + ray.dir * ray.sample_depth(i);
            obj.push(pose.apply(&p));
            world.push(p);
        }
    }
    let values = field.values(&obj);

    // only samples inside the ramp band carry derivatives
    let mut band = Vec::new();
    let mut at = 0;
    for ray in &rays.rays {
        let sigma = ray.step();
        for i in 0..ray.samples {
            if jacobian && (values[at + i] * inv_scale).abs() < sigma {
                band.push(at + i);
            }
        }
        at += ray.samples;
    }
    let band_obj: Vec<Vec3> = band.iter().map(|&k| obj[k]).collect();
    let band_grads = field.gradients(&band_obj);

    let mut out = Vec::with_capacity(rays.rays.len());
    let mut at = 0;
    let mut bi = 0;
    let mut e = Vec::new();
    let mut de: Vec<Option<Tangent>> = Vec::new();
    for ray in &rays.rays {
        let n = ray.samples;
        let sigma = ray.step();
        e.clear();
        de.clear();
        for i in 0..n {
            let s_world = values[at + i] * inv_scale;
            let (ei, slope) = empty_prob_grad(s_world, sigma);
            e.push(ei);
            if bi < band.len() && band[bi] == at + i {
                let (s, gz, gp) = &band_grads[bi];
                debug_assert_eq!(s.to_bits(), values[at + i].to_bits());
                // d(s / scale) = dF / scale - (s / scale) dlog_scale
                let mut row = tangent_row(gz, gp, &jz, pose, &world[at + i]) * inv_scale;
                row[TANGENT_DIM - 1] -= s_world;
                de.push(Some(row * slope));
                bi += 1;
            } else {
                de.push(None);
            }
        }
        // prefix products E_{k-1}, suffix products and depth tails
        let mut prefix = vec![1.0; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] * e[i];
        }
        let escape = prefix[n];
        let d_esc = ray.escape_depth();
        let mut depth = ray.sample_depth(0);
        for i in 0..n {
            let next = if i + 1 < n {
                ray.sample_depth(i + 1)
            } else {
                d_esc
            };
            depth += prefix[i + 1] * (next - ray.sample_depth(i));
        }
        let mut d_escape = Tangent::zeros();
        let mut d_depth = Tangent::zeros();
        let mut suffix = 1.0;
        let mut tail = 0.0;
        for k in (0..n).rev() {
            let next = if k + 1 < n {
                ray.sample_depth(k + 1)
            } else {
                d_esc
            };
            // tail_k = (d_{k+1} - d_k) + e_{k+1} tail_{k+1}
            tail = (next - ray.sample_depth(k)) + if k + 1 < n { e[k + 1] * tail } else { 0.0 };
            if let Some(row) = &de[k] {
                d_escape += row * (prefix[k] * suffix);
                d_depth += row * (prefix[k] * tail);
            }
            suffix *= e[k];
        }
        out.push(RayEval {
            escape,
            depth,
            d_escape,
            d_depth,
        });
        at += n;
    }
    Ok(out)
}

/// Mean mask cost over the bundle's mask rays; residual
/// `sqrt(cost + eps) / sqrt(|rays|)`.
pub fn mask_loss(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    rays: &RayBundle,
) -> Result<TermOutput> {
    let evals = evaluate_rays(model, w, pose, rays)?;
    mask_term(rays, &evals)
}

/// Mean squared depth error over the bundle's depth rays; residual
/// `(d_u - rendered) / sqrt(|rays|)`.
pub fn depth_loss(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    rays: &RayBundle,
) -> Result<TermOutput> {
    let evals = evaluate_rays(model, w, pose, rays)?;
    depth_term(rays, &evals)
}

pub fn mask_term(rays: &RayBundle, evals: &[RayEval]) -> Result<TermOutput> {
    let count = rays.mask_count();
    if count == 0 {
        return Err(Error::Empty("mask rays"));
    }
    let inv = 1.0 / (count as f64).sqrt();
    let mut out = TermOutput::empty();
    for (ray, ev) in rays.rays.iter().zip(evals) {
        let Some(outside) = ray.outside_mask else {
            continue;
        };
        let cost = mask_cost(ev.escape, outside);
        let root = (cost + MASK_EPS).sqrt();
        let dcost = if outside { -ev.d_escape } else { ev.d_escape };
        out.loss += cost / count as f64;
        out.residuals.push(root * inv);
        out.jacobian.push(dcost * (0.5 / root * inv));
    }
    Ok(out)
}

pub fn depth_term(rays: &RayBundle, evals: &[RayEval]) -> Result<TermOutput> {
    let count = rays.depth_count();
    if count == 0 {
        return Err(Error::Empty("depth rays"));
    }
    let inv = 1.0 / (count as f64).sqrt();
    let mut out = TermOutput::empty();
    for (ray, ev) in rays.rays.iter().zip(evals) {
        let Some(du) = ray.depth else { continue };
        let r = (du - ev.depth) * inv;
        out.loss += r * r;
        out.residuals.push(r);
        out.jacobian.push(-ev.d_depth * inv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::render::{make_observation_bundle, orbit_cameras, NoiseConfig, PlacedShape};
    use crate::shape::ProceduralShape;
    use rand::Rng;

    #[test]
    fn ramp_values() {
        assert_eq!(empty_prob(0.0, 0.2), 0.5);
        assert_eq!(empty_prob(0.2, 0.2), 1.0);
        assert_eq!(empty_prob(-0.2, 0.2), 0.0);
        assert_eq!(empty_prob(0.1, 0.2), 0.75);
        assert_eq!(empty_prob_grad(0.05, 0.2).1, 2.5);
        assert_eq!(empty_prob_grad(0.3, 0.2).1, 0.0);
    }

    #[test]
    fn termination_examples() {
        assert_eq!(
            termination_distribution(&[1.0, 1.0, 1.0]),
            vec![0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            termination_distribution(&[0.0, 0.7, 0.2]),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(termination_distribution(&[0.5, 0.5]), vec![0.5, 0.25, 0.25]);
        let p = termination_distribution(&[0.5, 0.5]);
        assert_eq!(rendered_depth(&[1.0, 2.0], &p, 2.0), 1.5);
        assert_eq!(mask_cost(p[2], true), 0.75);
        assert_eq!(
            mask_cost(termination_distribution(&[0.3, 0.0])[2], false),
            0.0
        );
        assert_eq!(
            rendered_depth(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 0.0], 9.0),
            2.0
        );
        assert_eq!(
            rendered_depth(&[1.0, 2.0], &termination_distribution(&[1.0, 1.0]), 7.0),
            7.0
        );
    }

    fn model_fixture() -> (DecoderWeights, FlowWeights) {
        let dec = DecoderWeights::random(
            DecoderConfig {
                hidden: 16,
                softplus_beta: 10.0,
            },
            5,
        );
        let mut flow = FlowWeights::identity(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in flow.params.iter_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let lay = flow.layout();
        for p in &mut flow.params[lay.out_log_scale..] {
            *p = -1.0;
        }
        (dec, flow)
    }

    fn perturb(w: &Code, pose: &SimilarityPose, delta: &Tangent) -> (Code, SimilarityPose) {
        let dw = Code::from_column_slice(&delta.as_slice()[..LATENT_DIM]);
        (w + dw, pose.retract(&delta.as_slice()[LATENT_DIM..]))
    }

    /// Central-difference check of every residual row over the tangent.
    fn check_fd(f: &dyn Fn(&Code, &SimilarityPose) -> TermOutput, w: &Code, pose: &SimilarityPose) {
        let base = f(w, pose);
        let h = 1e-5;
        for k in 0..TANGENT_DIM {
            let mut d = Tangent::zeros();
            d[k] = h;
            let (wp, pp) = perturb(w, pose, &d);
            let (wm, pm) = perturb(w, pose, &-d);
            let (a, b) = (f(&wp, &pp), f(&wm, &pm));
            for r in 0..base.residuals.len() {
                let fd = (a.residuals[r] - b.residuals[r]) / (2.0 * h);
                let an = base.jacobian[r][k];
                assert!(
                    (an - fd).abs() <= 1e-4 * an.abs().max(1e-3),
                    "row {r} col {k}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn surface_jacobian_and_duplication() {
        let (dec, flow) = model_fixture();
        let model = ShapeModel::with_flow(&dec, &flow);
        let pose = SimilarityPose {
            rotation: nalgebra::UnitQuaternion::from_euler_angles(0.2, 0.1, -0.4),
            translation: Vec3::new(0.1, 0.0, -0.2),
            log_scale: 0.1,
        };
        let w = Code::from_fn(|i, _| 0.1 * i as f64 - 0.5);
        let pts: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new(0.1 * i as f64, -0.3, 0.2 + 0.05 * i as f64))
            .collect();
        check_fd(&|w, p| surface_loss(&model, w, p, &pts).unwrap(), &w, &pose);
        let one = surface_loss(&model, &w, &pose, &pts[..1]).unwrap().loss;
        let two = surface_loss(&model, &w, &pose, &[pts[0], pts[0]])
            .unwrap()
            .loss;
        assert!((one - two).abs() <= 1e-14 * one);
        assert!(surface_loss(&model, &w, &pose, &[]).is_err());
    }

    fn ray_fixture() -> (RayBundle, SimilarityPose) {
        let shape = PlacedShape::canonical(ProceduralShape::sphere(0.5));
        let cams = orbit_cameras(1, 2.5, 0.5, 0.3, &Vec3::zeros(), 40.0, 24, 20).unwrap();
        let bundle = make_observation_bundle(
            &shape,
            &cams,
            &NoiseConfig {
                bbox_margin: 3,
                ..Default::default()
            },
            10,
            1,
        )
        .unwrap();
        let pose = SimilarityPose::identity();
        let rays = build_rays(
            &bundle.frames[0],
            &pose,
            &RayConfig {
                samples: 16,
                budget: 60,
                box_half: 1.1,
            },
            4,
        )
        .unwrap();
        (rays, pose)
    }

    #[test]
    fn ray_terms_match_finite_differences() {
        // a random decoder has its zero level set somewhere in the box; scale
        // the output so many samples fall inside the ramp band
        let (mut dec, flow) = model_fixture();
        let lay = dec.layout().clone();
        dec.params[lay.bias_offset[7]] = 0.05;
        let model = ShapeModel::with_flow(&dec, &flow);
        let (rays, pose) = ray_fixture();
        assert!(rays.mask_count() > 0 && rays.depth_count() > 0);
        let w = Code::from_fn(|i, _| 0.05 * i as f64 - 0.4);
        let evals = evaluate_rays(&model, &w, &pose, &rays).unwrap();
        assert!(
            evals.iter().any(|e| e.d_escape.norm() > 0.0),
            "no ray crosses the band"
        );
        check_fd(&|w, p| mask_loss(&model, w, p, &rays).unwrap(), &w, &pose);
        check_fd(&|w, p| depth_loss(&model, w, p, &rays).unwrap(), &w, &pose);
    }

    #[test]
    fn ray_selection_contract() {
        let (rays, _) = ray_fixture();
        for r in &rays.rays {
            assert!(r.d_min > 0.0 && r.d_min < r.d_max);
        }
        let shape = PlacedShape::canonical(ProceduralShape::sphere(0.5));
        let cams = orbit_cameras(1, 2.5, 0.5, 0.3, &Vec3::zeros(), 40.0, 24, 20).unwrap();
        let bundle = make_observation_bundle(&shape, &cams, &NoiseConfig::default(), 0, 1).unwrap();
        let f = &bundle.frames[0];
        let total = f.mask_pixels().len() + f.background_pixels().len();
        let all = build_rays(
            f,
            &SimilarityPose::identity(),
            &RayConfig {
                budget: total + 5,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(all.mask_count(), total);
        let some = build_rays(
            f,
            &SimilarityPose::identity(),
            &RayConfig {
                budget: total / 2,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let inside = some
            .rays
            .iter()
            .filter(|r| r.outside_mask == Some(false))
            .count() as f64;
        let expect = f.mask_pixels().len() as f64 / total as f64;
        assert!((inside / some.mask_count() as f64 - expect).abs() <= 0.1 * expect);
    }

    #[test]
    fn free_ray_at_escape_depth_has_zero_residual() {
        let dec = DecoderWeights::zeros(DecoderConfig {
            hidden: 8,
            softplus_beta: 10.0,
        });
        let mut dec = dec;
        let lay = dec.layout().clone();
        // constant field far above the band: every sample is empty
        dec.params[lay.bias_offset[7]] = 10.0;
        let model = ShapeModel::bypass(&dec);
        let ray = Ray {
            pixel: (0, 0),
            origin: Vec3::new(-3.0, 0.0, 0.0),
            dir: Vec3::x(),
            d_min: 2.0,
            d_max: 4.0,
            samples: 8,
            outside_mask: Some(true),
            depth: Some(4.0),
        };
        let rays = RayBundle { rays: vec![ray] };
        let d = depth_loss(&model, &Code::zeros(), &SimilarityPose::identity(), &rays).unwrap();
        assert_eq!(d.residuals[0], 0.0);
        let m = mask_loss(&model, &Code::zeros(), &SimilarityPose::identity(), &rays).unwrap();
        assert_eq!(m.loss, 0.0);
    }
}
