//! Gaussianization flow `z = G(w)`.
//!
//! Three blocks, each an orthogonal rotation (a product of 16 Householder
//! reflections) followed by a per-dimension kernel layer
//! `y = probit(F_mix(x))`, where `F_mix` is a mixture of `K` logistic CDFs.
//! A fixed per-dimension affine map (the training codes' mean and standard
//! deviation) takes the last block's output to code units:
//!
//! `z = m + exp(l) * K3(R3 K2(R2 K1(R1 w))))`.
//!
//! Forward evaluation is closed form; the inverse solves each kernel layer per
//! dimension with a bracketed Newton iteration. Training maximises the code
//! likelihood through the inverse pass using implicit differentiation of the
//! kernel inversion.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::SMatrix;
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::special::{normal_pdf, probit, probit_tails, sigmoid, LN_SQRT_2PI};
use crate::{Code, Error, Result, LATENT_DIM};

pub const NUM_BLOCKS: usize = 3;
/// Householder reflections per rotation layer.
pub const NUM_REFLECTIONS: usize = LATENT_DIM;
const HOUSEHOLDER_LEN: usize = NUM_REFLECTIONS * LATENT_DIM;

pub type Mat16 = SMatrix<f64, LATENT_DIM, LATENT_DIM>;

/// Maximum bracketed-Newton iterations per inverted kernel dimension.
pub const MAX_INVERSION_ITERS: usize = 200;
const INVERSION_TOL: f64 = 1e-12;

/// Offsets of one block's parameters inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockLayout {
    householder: usize,
    anchors: usize,
    log_bandwidths: usize,
    logits: usize,
}

/// Flat parameter layout: per block `[householder 16x16 | anchors 16K |
/// log-bandwidths 16K | logits 16K]`, then the output shift (16) and output
/// log-scale (16).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowLayout {
    pub components: usize,
    blocks: [BlockLayout; NUM_BLOCKS],
    pub out_shift: usize,
    pub out_log_scale: usize,
    pub len: usize,
}

impl FlowLayout {
    pub fn new(components: usize) -> Self {
        let per_dim = LATENT_DIM * components;
        let mut at = 0;
        let blocks = core::array::from_fn(|_| {
            let b = BlockLayout {
                householder: at,
                anchors: at + HOUSEHOLDER_LEN,
                log_bandwidths: at + HOUSEHOLDER_LEN + per_dim,
                logits: at + HOUSEHOLDER_LEN + 2 * per_dim,
            };
            at += HOUSEHOLDER_LEN + 3 * per_dim;
            b
        });
        let out_shift = at;
        let out_log_scale = at + LATENT_DIM;
        Self {
            components,
            blocks,
            out_shift,
            out_log_scale,
            len: at + 2 * LATENT_DIM,
        }
    }

    /// Parameters updated by training (everything but the output affine map).
    pub fn trainable_len(&self) -> usize {
        self.out_shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowWeights {
    pub components: usize,
    pub params: Vec<f64>,
}

impl FlowWeights {
    /// Near-identity flow: paired Householder vectors (each pair cancels, so
    /// every rotation is the identity up to rounding) and kernels whose mixture
    /// approximates the standard normal CDF.
    pub fn identity(components: usize, seed: u64) -> Result<Self> {
        if components == 0 || components > MAX_COMPONENTS {
            return Err(Error::InvalidArgument(alloc::format!(
                "flow components must be in 1..={MAX_COMPONENTS}"
            )));
        }
        let lay = FlowLayout::new(components);
        let mut params = vec![0.0; lay.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = components;
        let (anchors, h) = identity_kernel(k);
        for b in &lay.blocks {
            for pair in 0..NUM_REFLECTIONS / 2 {
                let v: [f64; LATENT_DIM] =
                    core::array::from_fn(|_| StandardNormal.sample(&mut rng));
                for r in 0..2 {
                    let at = b.householder + (2 * pair + r) * LATENT_DIM;
                    params[at..at + LATENT_DIM].copy_from_slice(&v);
                }
            }
            for d in 0..LATENT_DIM {
                for (c, mu) in anchors.iter().enumerate() {
                    params[b.anchors + d * k + c] = *mu;
                    params[b.log_bandwidths + d * k + c] = h.ln();
                }
            }
        }
        Ok(Self { components, params })
    }

    pub fn from_params(components: usize, params: Vec<f64>) -> Result<Self> {
        let w = Self { components, params };
        w.validate()?;
        Ok(w)
    }

    pub fn layout(&self) -> FlowLayout {
        FlowLayout::new(self.components)
    }

    pub fn validate(&self) -> Result<()> {
        let lay = self.layout();
        if self.components == 0 || self.components > MAX_COMPONENTS || self.params.len() != lay.len
        {
            return Err(Error::InvalidArgument(alloc::format!(
                "flow with {} components needs {} parameters, got {}",
                self.components,
                lay.len,
                self.params.len()
            )));
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("flow parameters"));
        }
        for b in &lay.blocks {
            for i in 0..NUM_REFLECTIONS {
                let v = &self.params
                    [b.householder + i * LATENT_DIM..b.householder + (i + 1) * LATENT_DIM];
                if v.iter().map(|x| x * x).sum::<f64>() < 1e-24 {
                    return Err(Error::Degenerate("zero Householder vector"));
                }
            }
        }
        Ok(())
    }

    /// Sets the output affine map to `z = shift + exp(log_scale) * y`.
    pub fn set_output_affine(&mut self, shift: &Code, log_scale: &Code) {
        let lay = self.layout();
        self.params[lay.out_shift..lay.out_shift + LATENT_DIM].copy_from_slice(shift.as_slice());
        self.params[lay.out_log_scale..lay.out_log_scale + LATENT_DIM]
            .copy_from_slice(log_scale.as_slice());
    }

    pub fn rotation(&self, block: usize) -> Mat16 {
        let b = self.layout().blocks[block];
        householder_product(&self.params[b.householder..b.householder + HOUSEHOLDER_LEN])
    }

    /// Rotations precomputed once for repeated evaluation.
    pub fn prepare(&self) -> PreparedFlow<'_> {
        PreparedFlow {
            weights: self,
            layout: self.layout(),
            rotations: core::array::from_fn(|b| self.rotation(b)),
        }
    }
}

/// Equal-weight mixture closest to the standard normal CDF: anchors on scaled
/// normal quantiles with a shared bandwidth, the scale and bandwidth picked by
/// a coarse-to-fine grid search minimising `max |probit(F(x)) - x|` on
/// `[-3, 3]`.
fn identity_kernel(k: usize) -> (Vec<f64>, f64) {
    let q: Vec<f64> = (0..k)
        .map(|i| probit((i as f64 + 0.5) / k as f64))
        .collect();
    let deviation = |alpha: f64, h: f64| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            let (f, u) = q.iter().fold((0.0, 0.0), |(f, u), m| {
                let t = (x - alpha * m) / h;
                (f + sigmoid(t), u + sigmoid(-t))
            });
            worst = worst.max((probit_tails(f / k as f64, u / k as f64).0 - x).abs());
        }
        worst
    };
    let (mut alpha, mut h, mut step_a, mut step_h) = (0.8, 0.4, 0.2, 0.1);
    let mut best = deviation(alpha, h);
    for _ in 0..6 {
        let (a0, h0) = (alpha, h);
        for i in -5..=5 {
            for j in -5..=5 {
                let (a, hh) = (a0 + step_a * i as f64 / 5.0, h0 + step_h * j as f64 / 5.0);
                if a < 0.0 || hh <= 0.05 {
                    continue;
                }
                let d = deviation(a, hh);
                if d < best {
                    (best, alpha, h) = (d, a, hh);
                }
            }
        }
        step_a /= 4.0;
        step_h /= 4.0;
    }
    (q.iter().map(|m| alpha * m).collect(), h)
}

/// `H_1 H_2 ... H_n` with `H_i = I - 2 v_i v_i^T / |v_i|^2`.
fn householder_product(vs: &[f64]) -> Mat16 {
    let mut r = Mat16::identity();
    for v in vs.chunks_exact(LATENT_DIM) {
        let v = Code::from_column_slice(v);
        let n2 = v.norm_squared();
        // R <- R H = R - (2/n2) (R v) v^T
        let rv = r * v;
        r -= (2.0 / n2) * rv * v.transpose();
    }
    r
}

/// Gradient of `L` with respect to every Householder vector given
/// `G = dL/dR` for `R = H_1 ... H_n`.
fn householder_grads(vs: &[f64], g: &Mat16, out: &mut [f64]) {
    let n = vs.len() / LATENT_DIM;
    let hs: Vec<Mat16> = vs
        .chunks_exact(LATENT_DIM)
        .map(|v| {
            let v = Code::from_column_slice(v);
            Mat16::identity() - (2.0 / v.norm_squared()) * v * v.transpose()
        })
        .collect();
    // suffix[i] = H_{i+1} ... H_n
    let mut suffix = vec![Mat16::identity(); n + 1];
    for i in (0..n).rev() {
        suffix[i] = hs[i] * suffix[i + 1];
    }
    let mut prefix = Mat16::identity();
    for i in 0..n {
        // dL/dH_i = A^T G B^T with A = H_1..H_{i-1}, B = H_{i+1}..H_n
        let m = prefix.transpose() * g * suffix[i + 1].transpose();
        let v = Code::from_column_slice(&vs[i * LATENT_DIM..(i + 1) * LATENT_DIM]);
        let n2 = v.norm_squared();
        let mv = m * v;
        let mtv = m.transpose() * v;
        let vmv = v.dot(&mv);
        let grad = -2.0 / n2 * (mv + mtv) + 4.0 * vmv / (n2 * n2) * v;
        for (o, gv) in out[i * LATENT_DIM..(i + 1) * LATENT_DIM]
            .iter_mut()
            .zip(grad.iter())
        {
            *o += gv;
        }
        prefix *= hs[i];
    }
}

/// One dimension of a kernel layer: mixture parameters of length `K`.
#[derive(Debug, Clone, Copy)]
pub struct Kernel<'a> {
    pub anchors: &'a [f64],
    pub log_bandwidths: &'a [f64],
    pub logits: &'a [f64],
}

/// Value of a kernel dimension at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    /// `probit(F_mix(x))`.
    pub y: f64,
    /// `dy/dx = f_mix(x) / phi(y)`.
    pub dy: f64,
    pub cdf: f64,
    pub upper: f64,
    pub density: f64,
    /// The CDF saturated and the probit argument was clamped.
    pub clamped: bool,
}

impl Kernel<'_> {
    fn weights(&self, out: &mut [f64]) {
        let max = self
            .logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, a) in out.iter_mut().zip(self.logits) {
            *o = (a - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }

    pub fn eval(&self, x: f64) -> KernelValue {
        let mut buf = [0.0; MAX_COMPONENTS];
        let pi = &mut buf[..self.anchors.len()];
        self.weights(pi);
        let (mut cdf, mut upper, mut density) = (0.0, 0.0, 0.0);
        for c in 0..pi.len() {
            let h = self.log_bandwidths[c].exp();
            let u = (x - self.anchors[c]) / h;
            let s = sigmoid(u);
            let sn = sigmoid(-u);
            cdf += pi[c] * s;
            upper += pi[c] * sn;
            density += pi[c] * s * sn / h;
        }
        let (y, clamped) = probit_tails(cdf, upper);
        KernelValue {
            y,
            dy: density / normal_pdf(y),
            cdf,
            upper,
            density,
            clamped,
        }
    }

    /// Initial inversion bracket: extreme anchors widened by 10 bandwidths.
    fn bracket(&self) -> (f64, f64) {
        let hmax = self
            .log_bandwidths
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .exp();
        let lo = self.anchors.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self
            .anchors
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        (lo - 10.0 * hmax, hi + 10.0 * hmax)
    }

    /// Solves `eval(x).y = y` by Newton steps safeguarded with bisection.
    pub fn invert(&self, y: f64) -> Option<f64> {
        let (mut lo, mut hi) = self.bracket();
        let mut expand = 0;
        while self.eval(lo).y > y {
            let w = hi - lo;
            hi = lo;
            lo -= 2.0 * w;
            expand += 1;
            if expand > 60 {
                return None;
            }
        }
        while self.eval(hi).y < y {
            let w = hi - lo;
            lo = hi;
            hi += 2.0 * w;
            expand += 1;
            if expand > 60 {
                return None;
            }
        }
        let mut x = 0.5 * (lo + hi);
        let mut dx_old = hi - lo;
        let mut dx = dx_old;
        for _ in 0..MAX_INVERSION_ITERS {
            let v = self.eval(x);
            let g = v.y - y;
            if g == 0.0 {
                return Some(x);
            }
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - g / v.dy;
            // fall back to bisection when Newton leaves the bracket or does not
            // halve the step of two iterations ago
            let next = if !(newton > lo && newton < hi) || (2.0 * g).abs() > (dx_old * v.dy).abs() {
                dx_old = dx;
                0.5 * (lo + hi)
            } else {
                dx_old = dx;
                newton
            };
            dx = next - x;
            if dx.abs() <= INVERSION_TOL * (1.0 + x.abs()) {
                return Some(next);
            }
            x = next;
        }
        None
    }
}

/// Maximum number of mixture components per kernel dimension.
pub const MAX_COMPONENTS: usize = 64;

/// A flow with its rotation matrices materialised.
pub struct PreparedFlow<'a> {
    weights: &'a FlowWeights,
    layout: FlowLayout,
    rotations: [Mat16; NUM_BLOCKS],
}

/// Forward evaluation with the Jacobian and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEval {
    pub z: Code,
    /// `dz/dw`.
    pub jacobian: Mat16,
    pub logdet: f64,
    /// Per-block log-determinant contributions (rotations contribute zero;
    /// the output affine map is included in the last block).
    pub block_logdets: [f64; NUM_BLOCKS],
    /// Some kernel CDF saturated and was clamped before the probit.
    pub clamped: bool,
}

impl<'a> PreparedFlow<'a> {
    pub fn weights(&self) -> &'a FlowWeights {
        self.weights
    }

    pub fn rotation(&self, block: usize) -> &Mat16 {
        &self.rotations[block]
    }

    pub fn kernel(&self, block: usize, dim: usize) -> Kernel<'a> {
        let b = self.layout.blocks[block];
        let k = self.layout.components;
        let p = &self.weights.params;
        Kernel {
            anchors: &p[b.anchors + dim * k..b.anchors + (dim + 1) * k],
            log_bandwidths: &p[b.log_bandwidths + dim * k..b.log_bandwidths + (dim + 1) * k],
            logits: &p[b.logits + dim * k..b.logits + (dim + 1) * k],
        }
    }

    fn out_affine(&self) -> (Code, Code) {
        let p = &self.weights.params;
        let l = &self.layout;
        (
            Code::from_column_slice(&p[l.out_shift..l.out_shift + LATENT_DIM]),
            Code::from_column_slice(&p[l.out_log_scale..l.out_log_scale + LATENT_DIM]),
        )
    }

    pub fn forward(&self, w: &Code) -> Code {
        let mut x = *w;
        for b in 0..NUM_BLOCKS {
            x = self.rotations[b] * x;
            for d in 0..LATENT_DIM {
                x[d] = self.kernel(b, d).eval(x[d]).y;
            }
        }
        let (m, l) = self.out_affine();
        m + l.map(f64::exp).component_mul(&x)
    }

    pub fn eval(&self, w: &Code) -> FlowEval {
        let mut x = *w;
        let mut jac = Mat16::identity();
        let mut block_logdets = [0.0; NUM_BLOCKS];
        let mut clamped = false;
        for b in 0..NUM_BLOCKS {
            x = self.rotations[b] * x;
            jac = self.rotations[b] * jac;
            for d in 0..LATENT_DIM {
                let v = self.kernel(b, d).eval(x[d]);
                x[d] = v.y;
                clamped |= v.clamped;
                block_logdets[b] += v.dy.ln();
                for c in 0..LATENT_DIM {
                    jac[(d, c)] *= v.dy;
                }
            }
        }
        let (m, l) = self.out_affine();
        block_logdets[NUM_BLOCKS - 1] += l.sum();
        let s = l.map(f64::exp);
        for d in 0..LATENT_DIM {
            for c in 0..LATENT_DIM {
                jac[(d, c)] *= s[d];
            }
        }
        FlowEval {
            z: m + s.component_mul(&x),
            jacobian: jac,
            logdet: block_logdets.iter().sum(),
            block_logdets,
            clamped,
        }
    }

    pub fn inverse(&self, z: &Code) -> Result<Code> {
        Ok(self.inverse_trace(z)?.w)
    }

    /// Inverse pass keeping the intermediate kernel inputs for training.
    fn inverse_trace(&self, z: &Code) -> Result<InverseTrace> {
        let (m, l) = self.out_affine();
        let mut y = (z - m).component_mul(&l.map(|v| (-v).exp()));
        let mut xs = [Code::zeros(); NUM_BLOCKS];
        let mut ys = [Code::zeros(); NUM_BLOCKS];
        for b in (0..NUM_BLOCKS).rev() {
            ys[b] = y;
            for d in 0..LATENT_DIM {
                xs[b][d] = self
                    .kernel(b, d)
                    .invert(y[d])
                    .ok_or(Error::InversionFailed { block: b, dim: d })?;
            }
            y = self.rotations[b].transpose() * xs[b];
        }
        Ok(InverseTrace { w: y, xs })
    }

    /// `log p(z)` under the flow pushed forward standard normal.
    pub fn log_likelihood(&self, z: &Code) -> Result<f64> {
        let w = self.inverse(z)?;
        Ok(gaussian_log_density(&w) - self.eval(&w).logdet)
    }
}

struct InverseTrace {
    w: Code,
    /// Kernel-layer inputs per block.
    xs: [Code; NUM_BLOCKS],
}

/// `log N(w; 0, I)`.
pub fn gaussian_log_density(w: &Code) -> f64 {
    -0.5 * w.norm_squared() - LATENT_DIM as f64 * LN_SQRT_2PI
}

fn check_code(v: &Code, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn flow_forward(flow: &FlowWeights, w: &Code) -> Result<Code> {
    check_code(w, "normalized code")?;
    Ok(flow.prepare().forward(w))
}

pub fn flow_inverse(flow: &FlowWeights, z: &Code) -> Result<Code> {
    check_code(z, "latent code")?;
    flow.prepare().inverse(z)
}

/// `log |det dz/dw|`.
pub fn flow_logdet(flow: &FlowWeights, w: &Code) -> Result<f64> {
    check_code(w, "normalized code")?;
    Ok(flow.prepare().eval(w).logdet)
}

/// `dz/dw`.
pub fn flow_jacobian(flow: &FlowWeights, w: &Code) -> Result<Mat16> {
    check_code(w, "normalized code")?;
    Ok(flow.prepare().eval(w).jacobian)
}

/// Negative log-likelihood of one code and its gradient with respect to the
/// trainable parameters (accumulated into `grad`, scaled by `weight`).
fn nll_and_grad(
    flow: &PreparedFlow<'_>,
    z: &Code,
    weight: f64,
    grad: &mut [f64],
    rot_grads: &mut [Mat16; NUM_BLOCKS],
) -> Result<f64> {
    let trace = flow.inverse_trace(z)?;
    let lay = &flow.layout;
    let k = lay.components;
    let (_, l) = flow.out_affine();
    let mut nll = -gaussian_log_density(&trace.w) + l.sum();

    let mut pi = [0.0; MAX_COMPONENTS];
    let mut g = trace.w * weight;
    for b in 0..NUM_BLOCKS {
        let x = &trace.xs[b];
        // w (or the previous block's output) = R^T x
        rot_grads[b] += x * g.transpose();
        let gx = flow.rotations[b] * g;
        let bl = lay.blocks[b];
        let mut gy = Code::zeros();
        for d in 0..LATENT_DIM {
            let ker = flow.kernel(b, d);
            let pi = &mut pi[..k];
            ker.weights(pi);
            let v = ker.eval(x[d]);
            nll += v.dy.ln();
            let phi = normal_pdf(v.y);
            // d/dx log k'(x) = f'/f + y k'
            let mut fprime = 0.0;
            for c in 0..k {
                let h = ker.log_bandwidths[c].exp();
                let u = (x[d] - ker.anchors[c]) / h;
                let (s, sn) = (sigmoid(u), sigmoid(-u));
                fprime += pi[c] * s * sn * (sn - s) / (h * h);
            }
            let total_x = gx[d] + weight * (fprime / v.density + v.y * v.dy);
            gy[d] = total_x / v.dy;
            // parameter gradients: direct d log k'/d theta at fixed x plus the
            // implicit dependence of x on theta through the inversion
            for c in 0..k {
                let h = ker.log_bandwidths[c].exp();
                let u = (x[d] - ker.anchors[c]) / h;
                let (s, sn) = (sigmoid(u), sigmoid(-u));
                let ss = s * sn;
                let dss = ss * (sn - s);
                let dfd_mu = -pi[c] * dss / (h * h);
                let dfd_rho = -pi[c] / h * (dss * u + ss);
                let dfd_a = pi[c] * (ss / h - v.density);
                let dfd_mu_cdf = -pi[c] * ss / h;
                let dfd_rho_cdf = -pi[c] * ss * u;
                // sigma_c - F computed on the more accurate tail
                let da_cdf = pi[c] * if v.cdf < 0.5 { s - v.cdf } else { v.upper - sn };
                for (slot, df, dcdf) in [
                    (bl.anchors + d * k + c, dfd_mu, dfd_mu_cdf),
                    (bl.log_bandwidths + d * k + c, dfd_rho, dfd_rho_cdf),
                    (bl.logits + d * k + c, dfd_a, da_cdf),
                ] {
                    let dk = dcdf / phi;
                    let dlogk = df / v.density + v.y * dk;
                    grad[slot] += weight * dlogk - total_x * dk / v.dy;
                }
            }
        }
        g = gy;
    }
    Ok(nll)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainConfig {
    /// Logistic components per kernel dimension.
    pub components: usize,
    pub steps: usize,
    pub lr: f64,
    /// Codes per Adam step; 0 uses every code.
    pub batch_size: usize,
    /// The learning rate is multiplied by `lr_decay` every `lr_decay_every`
    /// steps.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Weight of `0.5 |theta - theta_0|^2` over the kernel parameters, pulling
    /// them toward the near-identity initialisation. Small code sets are
    /// otherwise fitted with spiky marginals.
    pub kernel_decay: f64,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            components: 8,
            steps: 300,
            lr: 1e-3,
            batch_size: 0,
            lr_decay: 0.5,
            lr_decay_every: 100,
            kernel_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTraining {
    pub weights: FlowWeights,
    /// Mean code log-likelihood per step.
    pub log_likelihood: Vec<f64>,
}

/// Per-dimension mean and log standard deviation of a code set.
pub fn code_moments(codes: &[Code]) -> (Code, Code) {
    let n = codes.len() as f64;
    let mean = codes.iter().fold(Code::zeros(), |a, c| a + c) / n;
    let var = codes.iter().fold(Code::zeros(), |a, c| {
        a + (c - mean).component_mul(&(c - mean))
    }) / n;
    (mean, var.map(|v| 0.5 * v.max(1e-24).ln()))
}

/// Maximum-likelihood training on a code set. The output affine map is fixed
/// to the codes' per-dimension moments; rotations and kernels are trained by
/// Adam on the mean negative log-likelihood.
pub fn train_flow(codes: &[Code], cfg: &FlowTrainConfig) -> Result<FlowTraining> {
    if codes.len() < 2 {
        return Err(Error::InvalidArgument(
            "flow training needs at least 2 codes".into(),
        ));
    }
    if cfg.components == 0 || cfg.components > MAX_COMPONENTS {
        return Err(Error::InvalidArgument(alloc::format!(
            "flow components must be in 1..={MAX_COMPONENTS}"
        )));
    }
    for c in codes {
        check_code(c, "training code")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flow = FlowWeights::identity(cfg.components, rand::Rng::random(&mut rng))?;
    let (mean, log_std) = code_moments(codes);
    flow.set_output_affine(&mean, &log_std);
    let lay = flow.layout();
    let n_train = lay.trainable_len();
    let init = flow.params.clone();
    let mut adam = Adam::new(n_train, cfg.lr);
    let mut grad = vec![0.0; n_train];
    let mut order: Vec<usize> = (0..codes.len()).collect();
    let batch = if cfg.batch_size == 0 {
        codes.len()
    } else {
        cfg.batch_size.min(codes.len())
    };
    let mut history = Vec::with_capacity(cfg.steps);
    let mut cursor = codes.len();
    for step in 0..cfg.steps {
        if cfg.lr_decay_every > 0 && step > 0 && step % cfg.lr_decay_every == 0 {
            adam.lr *= cfg.lr_decay;
        }
        if batch < codes.len() && cursor + batch > codes.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx: &[usize] = if batch == codes.len() {
            &order
        } else {
            &order[cursor..cursor + batch]
        };
        cursor += batch;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let prepared = flow.prepare();
        let mut rot_grads = [Mat16::zeros(); NUM_BLOCKS];
        let inv = 1.0 / idx.len() as f64;
        let mut nll = 0.0;
        for &i in idx {
            nll += nll_and_grad(&prepared, &codes[i], inv, &mut grad, &mut rot_grads)? * inv;
        }
        for b in 0..NUM_BLOCKS {
            let h = lay.blocks[b].householder;
            householder_grads(
                &flow.params[h..h + HOUSEHOLDER_LEN],
                &rot_grads[b],
                &mut grad[h..h + HOUSEHOLDER_LEN],
            );
            if cfg.kernel_decay > 0.0 {
                for i in lay.blocks[b].anchors..lay.blocks[b].logits + LATENT_DIM * lay.components {
                    grad[i] += cfg.kernel_decay * (flow.params[i] - init[i]);
                }
            }
        }
        if !nll.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { step, loss: nll });
        }
        history.push(-nll);
        adam.step(&mut flow.params[..n_train], &grad);
        flow.validate()?;
    }
    Ok(FlowTraining {
        weights: flow,
        log_likelihood: history,
    })
}
