//! Pinhole cameras, sphere-traced masks and depth maps of placed procedural
//! shapes, and synthetic multi-frame observation bundles.
//!
//! Depth is the distance along the unit viewing ray (not the camera z).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion};
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{frame_from_heading, ray_aabb};
use crate::pose::SimilarityPose;
use crate::shape::ProceduralShape;
use crate::{Error, Mat3, Result, Vec3};

/// Sphere-tracing hit threshold (world units).
pub const HIT_EPS: f64 = 1e-4;
pub const MAX_TRACE_STEPS: usize = 256;
/// Depth stored for pixels whose ray misses the object.
pub const MISS_DEPTH: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World to camera; the camera looks along +z with x right and y down.
    pub world_to_camera: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        world_to_camera: Isometry3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidArgument(
                "camera focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(
                "camera resolution must be non-zero".into(),
            ));
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            return Err(Error::InvalidArgument(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, principal point at the image
    /// centre; `up` fixes the roll (image y points away from it).
    pub fn look_at(
        eye: &Vec3,
        target: &Vec3,
        up: &Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 || forward.cross(up).norm() < 1e-9 * forward.norm() {
            return Err(Error::Degenerate("look-at direction parallel to up"));
        }
        let ez = forward.normalize();
        let ex = ez.cross(up).normalize();
        let ey = ez.cross(&ex);
        let cam_to_world = Mat3::from_columns(&[ex, ey, ez]);
        let rot = UnitQuaternion::from_matrix(&cam_to_world.transpose());
        let t = -(rot * eye);
        let iso = Isometry3::from_parts(Translation3::from(t), rot);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            iso,
        )
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_camera
            .inverse_transform_point(&Point3::origin())
            .coords
    }

    /// World-frame ray `(origin, unit direction)` through the centre of pixel
    /// `(u, v)`.
    pub fn pixel_ray(&self, u: u32, v: u32) -> (Vec3, Vec3) {
        let d = Vec3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        let dw = self
            .world_to_camera
            .inverse_transform_vector(&d)
            .normalize();
        (self.center(), dw)
    }

    /// Continuous pixel coordinates of a world point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.world_to_camera.transform_point(&Point3::from(*p));
        (c.z > 1e-9).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Cameras on a horizontal ring around `target`, all looking at it.
pub fn orbit_cameras(
    count: usize,
    radius: f64,
    height: f64,
    phase: f64,
    target: &Vec3,
    focal: f64,
    width: u32,
    image_height: u32,
) -> Result<Vec<CameraModel>> {
    (0..count)
        .map(|i| {
            let a = phase + core::f64::consts::TAU * i as f64 / count as f64;
            let eye = target + Vec3::new(radius * a.cos(), radius * a.sin(), height);
            CameraModel::look_at(&eye, target, &Vec3::z(), focal, width, image_height)
        })
        .collect()
}

/// A procedural shape placed in the world by `pose` (world to object).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub shape: ProceduralShape,
    pub pose: SimilarityPose,
}

impl PlacedShape {
    pub fn canonical(shape: ProceduralShape) -> Self {
        Self {
            shape,
            pose: SimilarityPose::identity(),
        }
    }

    /// Signed distance in world units.
    pub fn sdf_world(&self, p: &Vec3) -> f64 {
        self.shape.sdf(&self.pose.apply(p)) / self.pose.scale()
    }

    /// World-frame bounding sphere `(centre, radius)`.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        (
            self.pose.object_position(),
            self.shape.bounding_radius() / self.pose.scale(),
        )
    }
}

/// Sphere-traces one ray; returns the hit distance.
pub fn trace_ray(shape: &PlacedShape, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let (c, r) = shape.bounding_sphere();
    let r = r * 1.01 + HIT_EPS;
    let oc = origin - c;
    let b = oc.dot(dir);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t_in, t_out) = (-b - sq, -b + sq);
    if t_out < 0.0 {
        return None;
    }
    let mut t = t_in.max(0.0);
    for _ in 0..MAX_TRACE_STEPS {
        let d = shape.sdf_world(&(origin + dir * t));
        if d < HIT_EPS {
            return Some(t);
        }
        t += d;
        if t > t_out {
            return None;
        }
    }
    None
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, on: bool) {
        let w = self.width as usize;
        self.data[v as usize * w + u as usize] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the set pixels.
    pub fn bbox(&self) -> Option<BBox2> {
        let mut b: Option<BBox2> = None;
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) {
                    b = Some(match b {
                        None => BBox2 {
                            u0: u,
                            v0: v,
                            u1: u,
                            v1: v,
                        },
                        Some(b) => BBox2 {
                            u0: b.u0.min(u),
                            v0: b.v0.min(v),
                            u1: b.u1.max(u),
                            v1: b.v1.max(v),
                        },
                    });
                }
            }
        }
        b
    }

    /// Morphological dilation (`radius > 0`) or erosion (`radius < 0`) with a
    /// disk of the given pixel radius.
    pub fn morph(&self, radius: i32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i64;
        let dilate = radius > 0;
        let mut out = Self::new(self.width, self.height);
        let (w, h) = (self.width as i64, self.height as i64);
        for v in 0..h {
            for u in 0..w {
                let mut hit = !dilate;
                'scan: for dv in -r..=r {
                    for du in -r..=r {
                        if du * du + dv * dv > r * r {
                            continue;
                        }
                        let (x, y) = (u + du, v + dv);
                        // pixels outside the image count as background
                        let on = x >= 0 && y >= 0 && x < w && y < h && self.get(x as u32, y as u32);
                        if dilate && on {
                            hit = true;
                            break 'scan;
                        }
                        if !dilate && !on {
                            hit = false;
                            break 'scan;
                        }
                    }
                }
                out.set(u as u32, v as u32, hit);
            }
        }
        out
    }
}

/// Inclusive pixel rectangle `[u0, u1] x [v0, v1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox2 {
    pub u0: u32,
    pub v0: u32,
    pub u1: u32,
    pub v1: u32,
}

impl BBox2 {
    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.u0 && u <= self.u1 && v >= self.v0 && v <= self.v1
    }

    /// Grows the box by `margin` pixels, clipped to a `width x height` image.
    pub fn expand(&self, margin: u32, width: u32, height: u32) -> Self {
        Self {
            u0: self.u0.saturating_sub(margin),
            v0: self.v0.saturating_sub(margin),
            u1: (self.u1 + margin).min(width - 1),
            v1: (self.v1 + margin).min(height - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub mask: Mask,
    /// Row-major ray lengths; [`MISS_DEPTH`] where the ray misses.
    pub depth: Vec<f64>,
}

impl RenderedView {
    pub fn is_empty(&self) -> bool {
        self.mask.count() == 0
    }
}

/// Sphere-traces every pixel.
pub fn render_view(shape: &PlacedShape, camera: &CameraModel) -> RenderedView {
    let mut mask = Mask::new(camera.width, camera.height);
    let mut depth = vec![MISS_DEPTH; camera.pixel_count()];
    for v in 0..camera.height {
        for u in 0..camera.width {
            let (o, d) = camera.pixel_ray(u, v);
            if let Some(t) = trace_ray(shape, &o, &d) {
                mask.set(u, v, true);
                depth[v as usize * camera.width as usize + u as usize] = t;
            }
        }
    }
    RenderedView { mask, depth }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the isotropic Gaussian added to surface points
    /// (world units).
    pub point_sigma: f64,
    /// Standard deviation of the Gaussian added to measured depths.
    pub depth_sigma: f64,
    /// Mask corruption: dilation radius in pixels (negative erodes).
    pub mask_radius: i32,
    /// Pixels added around the mask's tight box to form the 2D detection box.
    pub bbox_margin: u32,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            point_sigma: 0.0,
            depth_sigma: 0.0,
            mask_radius: 0,
            bbox_margin: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthTag {
    /// A measured surface depth inside the mask.
    Surface,
    /// An in-box pixel outside the mask; it carries no surface return.
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPixel {
    pub u: u32,
    pub v: u32,
    /// Measured ray length; [`MISS_DEPTH`] for background pixels.
    pub depth: f64,
    pub tag: DepthTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub camera: CameraModel,
    pub mask: Mask,
    pub bbox: Option<BBox2>,
    /// World-frame surface points seen in this frame.
    pub surface_points: Vec<Vec3>,
    pub depth_pixels: Vec<DepthPixel>,
}

impl FrameObservation {
    /// Pixels inside the box but outside the mask.
    pub fn background_pixels(&self) -> Vec<(u32, u32)> {
        let Some(b) = self.bbox else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for v in b.v0..=b.v1 {
            for u in b.u0..=b.u1 {
                if !self.mask.get(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn mask_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for v in 0..self.mask.height {
            for u in 0..self.mask.width {
                if self.mask.get(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// Frames whose render was empty (object outside the frustum).
    pub empty_frames: Vec<usize>,
    /// Frames with fewer visible pixels than requested points.
    pub short_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub frames: Vec<FrameObservation>,
    /// Union of every frame's surface points.
    pub fused_points: Vec<Vec3>,
    pub metadata: BundleMetadata,
}

/// Renders every camera, back-projects a random subset of visible pixels to
/// noisy surface points, corrupts the mask and derives the detection box and
/// the tagged depth pixels. Pure in `(shape, cameras, noise, seed)`.
pub fn make_observation_bundle(
    shape: &PlacedShape,
    cameras: &[CameraModel],
    noise: &NoiseConfig,
    points_per_frame: usize,
    seed: u64,
) -> Result<ObservationBundle> {
    if cameras.is_empty() {
        return Err(Error::Empty("camera list"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(cameras.len());
    let mut fused = Vec::new();
    let mut meta = BundleMetadata::default();
    for (fi, cam) in cameras.iter().enumerate() {
        cam.validate()?;
        let view = render_view(shape, cam);
        if view.is_empty() {
            meta.empty_frames.push(fi);
        }
        let mask = view.mask.morph(noise.mask_radius);
        let bbox = mask
            .bbox()
            .map(|b| b.expand(noise.bbox_margin, cam.width, cam.height));
        // visible pixels that survived the mask corruption
        let visible: Vec<usize> = (0..cam.pixel_count())
            .filter(|&i| view.mask.data[i] && mask.data[i])
            .collect();
        if visible.len() < points_per_frame {
            meta.short_frames.push(fi);
        }
        let take = points_per_frame.min(visible.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, visible.len(), take)
            .into_iter()
            .map(|i| visible[i])
            .collect();
        chosen.sort_unstable();
        let mut points = Vec::with_capacity(take);
        let mut depth_pixels = Vec::with_capacity(take);
        for &i in &chosen {
            let (u, v) = (
                (i % cam.width as usize) as u32,
                (i / cam.width as usize) as u32,
            );
            let (o, d) = cam.pixel_ray(u, v);
            let t = view.depth[i];
            let g: [f64; 4] = core::array::from_fn(|_| StandardNormal.sample(&mut rng));
            points.push(o + d * t + Vec3::new(g[0], g[1], g[2]) * noise.point_sigma);
            depth_pixels.push(DepthPixel {
                u,
                v,
                depth: t + g[3] * noise.depth_sigma,
                tag: DepthTag::Surface,
            });
        }
        let mut frame = FrameObservation {
            camera: cam.clone(),
            mask,
            bbox,
            surface_points: points,
            depth_pixels,
        };
        let background = frame.background_pixels();
        frame
            .depth_pixels
            .extend(background.into_iter().map(|(u, v)| DepthPixel {
                u,
                v,
                depth: MISS_DEPTH,
                tag: DepthTag::Background,
            }));
        fused.extend_from_slice(&frame.surface_points);
        frames.push(frame);
    }
    Ok(ObservationBundle {
        frames,
        fused_points: fused,
        metadata: meta,
    })
}

/// A bundle carrying only points (no images), as used by the point-cloud
/// completion experiments.
pub fn points_only_bundle(points: Vec<Vec3>) -> ObservationBundle {
    ObservationBundle {
        frames: Vec::new(),
        fused_points: points,
        metadata: BundleMetadata::default(),
    }
}

/// World-to-object pose of an object placed at `position` with heading `yaw`
/// about +z and uniform `scale`.
pub fn placement(position: &Vec3, yaw: f64, scale: f64) -> SimilarityPose {
    let r = frame_from_heading(&Vec3::new(yaw.cos(), yaw.sin(), 0.0), &Vec3::z());
    SimilarityPose::from_placement(&r, position, scale)
}

/// Clips a ray against an axis-aligned box given in the object frame of
/// `pose`; returns world-frame ray distances.
pub fn ray_object_box(
    pose: &SimilarityPose,
    origin: &Vec3,
    dir: &Vec3,
    half: f64,
) -> Option<(f64, f64)> {
    let o = pose.apply(origin);
    let d = pose.rotation_matrix() * dir * pose.scale();
    ray_aabb(&o, &d, &Vec3::repeat(-half), &Vec3::repeat(half))
}
