//! Joint `(w, pose)` estimation: the weighted multi-frame objective, damped
//! Gauss-Newton (Levenberg-Marquardt schedule) and an Adam baseline.

use alloc::vec::Vec;

use nalgebra::SMatrix;
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::decoder::{decoder_forward_batch, DecoderEval, DecoderWeights};
use crate::observation::{
    build_rays, depth_term, evaluate_rays_with, mask_term, surface_loss, surface_loss_value,
    LatentMap, RayBundle, RayConfig, ShapeModel, Tangent,
};
use crate::pose::SimilarityPose;
use crate::render::ObservationBundle;
use crate::{Code, Error, Result, Vec3, LATENT_DIM, TANGENT_DIM};

pub use crate::pose::init_pose_pca;

type Normal = SMatrix<f64, TANGENT_DIM, TANGENT_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub lambda_surface: f64,
    pub lambda_mask: f64,
    pub lambda_depth: f64,
    pub lambda_prior: f64,
    /// When false the pose stays at its initial value and only `w` moves.
    pub optimize_pose: bool,
    pub ray_samples: usize,
    pub ray_budget: usize,
    pub box_half: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_surface: 1.0,
            lambda_mask: 0.5,
            lambda_depth: 0.5,
            lambda_prior: 1e-2,
            optimize_pose: true,
            ray_samples: 32,
            ray_budget: 256,
            box_half: 1.1,
        }
    }
}

impl ObjectiveConfig {
    /// Silhouette-only weighting: surface and depth terms off.
    pub fn mask_only(self) -> Self {
        Self {
            lambda_surface: 0.0,
            lambda_depth: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [
            self.lambda_surface,
            self.lambda_mask,
            self.lambda_depth,
            self.lambda_prior,
        ];
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "objective weights must be finite and non-negative".into(),
            ));
        }
        if l[..3].iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(
                "at least one measurement weight must be positive".into(),
            ));
        }
        if self.ray_samples < 2 || self.ray_budget == 0 || !(self.box_half > 0.0) {
            return Err(Error::InvalidArgument("invalid ray configuration".into()));
        }
        Ok(())
    }

    fn rays(&self) -> RayConfig {
        RayConfig {
            samples: self.ray_samples,
            budget: self.ray_budget,
            box_half: self.box_half,
        }
    }

    fn uses_rays(&self) -> bool {
        self.lambda_mask > 0.0 || self.lambda_depth > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnConfig {
    pub max_iters: usize,
    pub step_tol: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tol: 1e-5,
            initial_damping: 1e-4,
            max_damping: 1e8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub iterations: usize,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub step_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-2,
            iterations: 1000,
            lr_decay: 0.5,
            lr_decay_every: 100,
            step_tol: 1e-4,
        }
    }
}

/// Observation data in the form the objective consumes: fused points for the
/// surface term and one ray bundle per frame. Rays are selected once, at the
/// pose given to [`prepare_observations`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreparedObservations {
    pub points: Vec<Vec3>,
    pub frames: Vec<RayBundle>,
}

pub fn prepare_observations(
    bundle: &ObservationBundle,
    pose: &SimilarityPose,
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<PreparedObservations> {
    cfg.validate()?;
    let mut frames = Vec::new();
    if cfg.uses_rays() {
        for (i, f) in bundle.frames.iter().enumerate() {
            let seed = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            frames.push(build_rays(f, pose, &cfg.rays(), seed)?);
        }
    }
    Ok(PreparedObservations {
        points: bundle.fused_points.clone(),
        frames,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermLosses {
    pub surface: f64,
    /// Mean over frames of the per-frame mask loss.
    pub mask: f64,
    /// Mean over frames of the per-frame depth loss.
    pub depth: f64,
    pub prior: f64,
    /// Weighted total; equals the squared norm of the stacked residuals.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub losses: TermLosses,
    pub residuals: Vec<f64>,
    /// One tangent row per residual; empty when not requested.
    pub jacobian: Vec<Tangent>,
}

/// `L = l1 L_surf + (1/Q) sum_q (l2 L_mask,q + l3 L_depth,q) + l4 |w|^2`,
/// assembled as stacked residuals.
pub fn total_objective(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    obs: &PreparedObservations,
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    objective(model, w, pose, obs, cfg, true)
}

fn push_scaled(out: &mut Objective, r: &[f64], j: &[Tangent], scale: f64, jacobian: bool) {
    out.residuals.extend(r.iter().map(|v| v * scale));
    if jacobian {
        out.jacobian.extend(j.iter().map(|row| row * scale));
    }
}

fn objective(
    model: &ShapeModel<'_>,
    w: &Code,
    pose: &SimilarityPose,
    obs: &PreparedObservations,
    cfg: &ObjectiveConfig,
    jacobian: bool,
) -> Result<Objective> {
    let mut out = Objective {
        losses: TermLosses::default(),
        residuals: Vec::new(),
        jacobian: Vec::new(),
    };
    if cfg.lambda_surface > 0.0 {
        let scale = cfg.lambda_surface.sqrt();
        if jacobian {
            let t = surface_loss(model, w, pose, &obs.points)?;
            out.losses.surface = t.loss;
            push_scaled(&mut out, &t.residuals, &t.jacobian, scale, true);
        } else {
            // only the sum of squares matters without a Jacobian
            let l = surface_loss_value(model, w, pose, &obs.points)?;
            out.losses.surface = l;
            out.residuals.push(l.sqrt() * scale);
        }
    }
    if cfg.uses_rays() {
        let q = obs.frames.len();
        if q == 0 {
            return Err(Error::Empty("observation frames"));
        }
        let qf = q as f64;
        for rays in &obs.frames {
            let evals = evaluate_rays_with(model, w, pose, rays, jacobian)?;
            if cfg.lambda_mask > 0.0 && rays.mask_count() > 0 {
                let t = mask_term(rays, &evals)?;
                out.losses.mask += t.loss / qf;
                push_scaled(
                    &mut out,
                    &t.residuals,
                    &t.jacobian,
                    (cfg.lambda_mask / qf).sqrt(),
                    jacobian,
                );
            }
            if cfg.lambda_depth > 0.0 && rays.depth_count() > 0 {
                let t = depth_term(rays, &evals)?;
                out.losses.depth += t.loss / qf;
                push_scaled(
                    &mut out,
                    &t.residuals,
                    &t.jacobian,
                    (cfg.lambda_depth / qf).sqrt(),
                    jacobian,
                );
            }
        }
    }
    if cfg.lambda_prior > 0.0 {
        let scale = cfg.lambda_prior.sqrt();
        out.losses.prior = w.norm_squared();
        for i in 0..LATENT_DIM {
            out.residuals.push(scale * w[i]);
            if jacobian {
                let mut row = Tangent::zeros();
                row[i] = scale;
                out.jacobian.push(row);
            }
        }
    }
    if jacobian && !cfg.optimize_pose {
        for row in &mut out.jacobian {
            row.fixed_rows_mut::<7>(LATENT_DIM).fill(0.0);
        }
    }
    out.losses.total = out.residuals.iter().map(|r| r * r).sum();
    if !out.losses.total.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub losses: TermLosses,
    pub step_norm: f64,
    pub damping: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    StepTolerance,
    MaxIterations,
    DampingOverflow,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationState {
    pub w: Code,
    pub pose: SimilarityPose,
    pub iteration: usize,
    /// Losses at the start and after every iteration (rejected trials included
    /// for Gauss-Newton, with `accepted = false`).
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub termination: Option<Termination>,
}

impl OptimizationState {
    /// `w = 0` at the given pose.
    pub fn new(pose: SimilarityPose) -> Self {
        Self {
            w: Code::zeros(),
            pose,
            iteration: 0,
            history: Vec::new(),
            converged: false,
            termination: None,
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history
            .iter()
            .rev()
            .find(|r| r.accepted)
            .map(|r| r.losses.total)
    }
}

fn retract(
    w: &Code,
    pose: &SimilarityPose,
    delta: &Tangent,
    optimize_pose: bool,
) -> (Code, SimilarityPose) {
    let dw = Code::from_column_slice(&delta.as_slice()[..LATENT_DIM]);
    let pose = if optimize_pose {
        pose.retract(&delta.as_slice()[LATENT_DIM..])
    } else {
        *pose
    };
    (w + dw, pose)
}

fn normal_equations(obj: &Objective) -> (Normal, Tangent) {
    let mut a = Normal::zeros();
    let mut g = Tangent::zeros();
    for (row, r) in obj.jacobian.iter().zip(&obj.residuals) {
        a.ger(1.0, row, row, 1.0);
        g += row * *r;
    }
    (a, g)
}

/// Damped Gauss-Newton: solves `(J^T J + mu I) d = -J^T r`, accepts a step
/// only when it does not increase the loss, multiplies `mu` by 10 on rejection
/// and by 0.5 on acceptance.
pub fn optimize_gn(
    model: &ShapeModel<'_>,
    obs: &PreparedObservations,
    cfg: &ObjectiveConfig,
    gn: &GnConfig,
    init: OptimizationState,
) -> Result<OptimizationState> {
    cfg.validate()?;
    let mut st = init;
    let mut cur = objective(model, &st.w, &st.pose, obs, cfg, true)?;
    let mut mu = gn.initial_damping;
    st.history.push(IterationRecord {
        iteration: st.iteration,
        losses: cur.losses,
        step_norm: 0.0,
        damping: mu,
        accepted: true,
    });
    for _ in 0..gn.max_iters {
        st.iteration += 1;
        let (a, g) = normal_equations(&cur);
        loop {
            let mut damped = a;
            for i in 0..TANGENT_DIM {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                if mu > gn.max_damping {
                    st.termination = Some(Termination::DampingOverflow);
                    return Ok(st);
                }
                continue;
            };
            let delta = -chol.solve(&g);
            let step_norm = delta.norm();
            if step_norm < gn.step_tol {
                st.converged = true;
                st.termination = Some(Termination::StepTolerance);
                return Ok(st);
            }
            let (w, pose) = retract(&st.w, &st.pose, &delta, cfg.optimize_pose);
            let trial = objective(model, &w, &pose, obs, cfg, false).ok();
            let accepted = trial
                .as_ref()
                .is_some_and(|t| t.losses.total <= cur.losses.total);
            let losses = trial.map(|t| t.losses).unwrap_or(TermLosses {
                total: f64::INFINITY,
                ..Default::default()
            });
            if accepted {
                mu = (mu * 0.5).max(1e-15);
                st.w = w;
                st.pose = pose;
                cur = objective(model, &st.w, &st.pose, obs, cfg, true)?;
                st.history.push(IterationRecord {
                    iteration: st.iteration,
                    losses: cur.losses,
                    step_norm,
                    damping: mu,
                    accepted: true,
                });
                break;
            }
            st.history.push(IterationRecord {
                iteration: st.iteration,
                losses,
                step_norm,
                damping: mu,
                accepted: false,
            });
            mu *= 10.0;
            if mu > gn.max_damping {
                st.termination = Some(Termination::DampingOverflow);
                return Ok(st);
            }
        }
    }
    st.termination = Some(Termination::MaxIterations);
    Ok(st)
}

/// Adam on the same tangent with a step-wise decaying learning rate. Returns
/// the lowest-loss iterate; a non-finite loss stops the run as diverged.
pub fn optimize_first_order(
    model: &ShapeModel<'_>,
    obs: &PreparedObservations,
    cfg: &ObjectiveConfig,
    adam_cfg: &AdamConfig,
    init: OptimizationState,
) -> Result<OptimizationState> {
    cfg.validate()?;
    let mut st = init;
    let mut adam = Adam::new(TANGENT_DIM, adam_cfg.lr);
    let (mut w, mut pose) = (st.w, st.pose);
    let mut best = f64::INFINITY;
    for it in 0..=adam_cfg.iterations {
        let obj = match objective(model, &w, &pose, obs, cfg, true) {
            Ok(o) => o,
            Err(_) => {
                st.termination = Some(Termination::Diverged);
                return Ok(st);
            }
        };
        let improved = obj.losses.total < best;
        if improved {
            best = obj.losses.total;
            st.w = w;
            st.pose = pose;
        }
        st.iteration = it;
        if it == adam_cfg.iterations {
            st.history.push(IterationRecord {
                iteration: it,
                losses: obj.losses,
                step_norm: 0.0,
                damping: 0.0,
                accepted: improved,
            });
            break;
        }
        let (_, g) = normal_equations(&obj);
        let grad = g * 2.0;
        if adam_cfg.lr_decay_every > 0 && it > 0 && it % adam_cfg.lr_decay_every == 0 {
            adam.lr *= adam_cfg.lr_decay;
        }
        let mut step = Tangent::zeros();
        let step_norm = adam.step(step.as_mut_slice(), grad.as_slice());
        st.history.push(IterationRecord {
            iteration: it,
            losses: obj.losses,
            step_norm,
            damping: 0.0,
            accepted: improved,
        });
        if step_norm < adam_cfg.step_tol {
            st.converged = true;
            st.termination = Some(Termination::StepTolerance);
            return Ok(st);
        }
        (w, pose) = retract(&w, &pose, &step, cfg.optimize_pose);
    }
    st.termination = Some(Termination::MaxIterations);
    Ok(st)
}

/// The decoded field of a normalized code: `p -> F(p, z(w))`, in the object
/// frame.
#[derive(Debug, Clone)]
pub struct DecodedShape<'a> {
    pub decoder: &'a DecoderWeights,
    pub z: Code,
}

impl DecodedShape<'_> {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        DecoderEval::new(self.decoder).forward(&self.z, p)
    }

    pub fn sdf_batch(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        decoder_forward_batch(self.decoder, &self.z, points)
    }
}

pub fn decode_shape<'a>(model: &ShapeModel<'a>, w: &Code) -> Result<DecodedShape<'a>> {
    let z = match &model.latent {
        LatentMap::Flow(f) => f.forward(w),
        LatentMap::Identity => *w,
    };
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("decoded code"));
    }
    Ok(DecodedShape {
        decoder: model.decoder,
        z,
    })
}
