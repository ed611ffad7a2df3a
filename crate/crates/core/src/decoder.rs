//! The SDF decoder `F(z, p) -> s`: eight fully connected layers over the
//! concatenated `(z, p)` input, smooth softplus activations on the hidden
//! layers, the input re-concatenated in front of layer 4, and a linear scalar
//! output.
//!
//! All parameters live in one flat vector (see [`Layout`]) so optimisers,
//! checksums and the weight container can treat them uniformly.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::shape::{sample_sdf_training_pairs, ProceduralShape, SdfSample};
use crate::special::softplus_and_sigmoid;
use crate::{Code, Error, Result, Vec3, LATENT_DIM};

/// `z` followed by `p`.
pub const INPUT_DIM: usize = LATENT_DIM + 3;
pub const NUM_LAYERS: usize = 8;
/// Index of the layer whose input is `[h, z, p]`.
pub const SKIP_LAYER: usize = 4;

/// Per-layer offsets into the flat parameter vector. Weights are stored
/// input-major: `weight[i * outputs + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub hidden: usize,
    pub inputs: [usize; NUM_LAYERS],
    pub outputs: [usize; NUM_LAYERS],
    pub weight_offset: [usize; NUM_LAYERS],
    pub bias_offset: [usize; NUM_LAYERS],
    pub len: usize,
}

impl Layout {
    pub fn new(hidden: usize) -> Self {
        let mut inputs = [hidden; NUM_LAYERS];
        let mut outputs = [hidden; NUM_LAYERS];
        inputs[0] = INPUT_DIM;
        inputs[SKIP_LAYER] = hidden + INPUT_DIM;
        outputs[NUM_LAYERS - 1] = 1;
        let mut weight_offset = [0; NUM_LAYERS];
        let mut bias_offset = [0; NUM_LAYERS];
        let mut at = 0;
        for l in 0..NUM_LAYERS {
            weight_offset[l] = at;
            at += inputs[l] * outputs[l];
            bias_offset[l] = at;
            at += outputs[l];
        }
        Self {
            hidden,
            inputs,
            outputs,
            weight_offset,
            bias_offset,
            len: at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub hidden: usize,
    /// Sharpness of the hidden activation `softplus(beta x) / beta`.
    pub softplus_beta: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            softplus_beta: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub config: DecoderConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

/// A per-shape latent code.
pub type LatentCode = Code;

impl DecoderWeights {
    pub fn zeros(config: DecoderConfig) -> Self {
        let layout = Layout::new(config.hidden);
        Self {
            config,
            params: vec![0.0; layout.len],
            layout,
        }
    }

    /// He-style Gaussian initialisation; the output layer starts small.
    pub fn random(config: DecoderConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = w.layout.clone();
        for l in 0..NUM_LAYERS {
            let std = if l + 1 == NUM_LAYERS {
                0.1 / (layout.inputs[l] as f64).sqrt()
            } else {
                (2.0 / layout.inputs[l] as f64).sqrt()
            };
            let (a, b) = (layout.weight_offset[l], layout.bias_offset[l]);
            for p in &mut w.params[a..b] {
                let g: f64 = StandardNormal.sample(&mut rng);
                *p = std * g;
            }
        }
        w
    }

    pub fn from_params(config: DecoderConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(config.hidden);
        if params.len() != layout.len {
            return Err(Error::InvalidArgument(alloc::format!(
                "decoder with hidden width {} needs {} parameters, got {}",
                config.hidden,
                layout.len,
                params.len()
            )));
        }
        let w = Self {
            config,
            params,
            layout,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn validate(&self) -> Result<()> {
        if self.config.hidden == 0 || !(self.config.softplus_beta > 0.0) {
            return Err(Error::InvalidArgument(
                "decoder needs hidden > 0 and beta > 0".into(),
            ));
        }
        if self.params.len() != self.layout.len {
            return Err(Error::InvalidArgument(
                "decoder parameter count does not match its layout".into(),
            ));
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("decoder parameters"));
        }
        Ok(())
    }

    pub fn evaluator(&self) -> DecoderEval<'_> {
        DecoderEval::new(self)
    }
}

/// `C = A B + beta C` for row/column-strided views.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb || k == 0);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the asserted extents keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Reusable batched forward/backward workspace bound to one set of weights.
///
/// Rows are filled with [`set_input`](Self::set_input), evaluated with
/// [`forward_batch`](Self::forward_batch) and differentiated with
/// [`backward_batch`](Self::backward_batch). A row's result does not depend on
/// the other rows of the batch.
pub struct DecoderEval<'a> {
    weights: &'a DecoderWeights,
    s: DecoderScratch,
}

/// The buffers of a [`DecoderEval`], detached from any weights so they can be
/// reused across parameter updates.
#[derive(Debug, Clone, Default)]
pub struct DecoderScratch {
    cap: usize,
    n: usize,
    /// Row-major input matrix of every layer.
    acts: Vec<Vec<f64>>,
    /// Activation derivative at every hidden unit.
    dact: Vec<Vec<f64>>,
    pre: Vec<f64>,
    out: Vec<f64>,
    g_pre: Vec<f64>,
    g_x: Vec<f64>,
    g_skip: Vec<f64>,
}

impl<'a> DecoderEval<'a> {
    pub fn new(weights: &'a DecoderWeights) -> Self {
        Self::with_scratch(weights, DecoderScratch::default())
    }

    /// Rebinds previously allocated buffers to `weights`. Buffers sized for a
    /// different hidden width are reallocated.
    pub fn with_scratch(weights: &'a DecoderWeights, mut s: DecoderScratch) -> Self {
        let lay = &weights.layout;
        if s.acts.len() != NUM_LAYERS
            || s.dact
                .iter()
                .zip(&lay.outputs)
                .any(|(d, o)| d.len() != s.cap * o)
        {
            s = DecoderScratch {
                acts: vec![Vec::new(); NUM_LAYERS],
                dact: vec![Vec::new(); NUM_LAYERS],
                ..DecoderScratch::default()
            };
        }
        let mut ev = Self { weights, s };
        ev.reserve(1);
        ev
    }

    pub fn into_scratch(self) -> DecoderScratch {
        self.s
    }

    pub fn weights(&self) -> &'a DecoderWeights {
        self.weights
    }

    /// Grows the workspace to hold at least `rows` rows.
    pub fn reserve(&mut self, rows: usize) {
        if rows <= self.s.cap {
            return;
        }
        let lay = &self.weights.layout;
        let h = lay.hidden;
        for l in 0..NUM_LAYERS {
            self.s.acts[l].resize(rows * lay.inputs[l], 0.0);
            self.s.dact[l].resize(rows * lay.outputs[l], 0.0);
        }
        self.s.pre.resize(rows * h, 0.0);
        self.s.out.resize(rows, 0.0);
        self.s.g_pre.resize(rows * h, 0.0);
        self.s.g_x.resize(rows * (h + INPUT_DIM), 0.0);
        self.s.g_skip.resize(rows * INPUT_DIM, 0.0);
        self.s.cap = rows;
    }

    /// Writes `(z, p)` into input row `row`, growing the workspace as needed.
    #[inline]
    pub fn set_input(&mut self, row: usize, z: &Code, p: &Vec3) {
        self.reserve(row + 1);
        let x = &mut self.s.acts[0][row * INPUT_DIM..(row + 1) * INPUT_DIM];
        x[..LATENT_DIM].copy_from_slice(z.as_slice());
        x[LATENT_DIM] = p.x;
        x[LATENT_DIM + 1] = p.y;
        x[LATENT_DIM + 2] = p.z;
    }

    /// Evaluates the first `n` input rows.
    pub fn forward_batch(&mut self, n: usize) -> &[f64] {
        assert!(
            n <= self.s.cap,
            "forward_batch on {n} rows with only {} filled",
            self.s.cap
        );
        self.s.n = n;
        if n == 0 {
            return &self.s.out[..0];
        }
        let lay = &self.weights.layout;
        let params = &self.weights.params;
        let beta = self.weights.config.softplus_beta;
        let h = lay.hidden;
        for l in 0..NUM_LAYERS {
            let (nin, nout) = (lay.inputs[l], lay.outputs[l]);
            let w = &params[lay.weight_offset[l]..lay.bias_offset[l]];
            let b = &params[lay.bias_offset[l]..lay.bias_offset[l] + nout];
            let pre = if l + 1 == NUM_LAYERS {
                &mut self.s.out[..n]
            } else {
                &mut self.s.pre[..n * nout]
            };
            gemm(
                n,
                nin,
                nout,
                &self.s.acts[l],
                (nin, 1),
                w,
                (nout, 1),
                0.0,
                pre,
                nout,
            );
            for row in pre.chunks_exact_mut(nout) {
                for (v, bo) in row.iter_mut().zip(b) {
                    *v += bo;
                }
            }
            if l + 1 == NUM_LAYERS {
                break;
            }
            let next_in = lay.inputs[l + 1];
            let (head, tail) = self.s.acts.split_at_mut(l + 1);
            let next = &mut tail[0];
            let dact = &mut self.s.dact[l];
            for r in 0..n {
                let src = &self.s.pre[r * nout..(r + 1) * nout];
                let dst = &mut next[r * next_in..r * next_in + nout];
                let da = &mut dact[r * nout..(r + 1) * nout];
                for o in 0..nout {
                    let a = beta * src[o];
                    let (sp, sg) = softplus_and_sigmoid(a);
                    dst[o] = sp / beta;
                    da[o] = sg;
                }
                if l + 1 == SKIP_LAYER {
                    next[r * next_in + h..(r + 1) * next_in]
                        .copy_from_slice(&head[0][r * INPUT_DIM..(r + 1) * INPUT_DIM]);
                }
            }
        }
        &self.s.out[..n]
    }

    /// Backpropagates `upstream[r] * dF_r` for the rows of the last forward
    /// pass. Accumulates into `param_grads` (flat layout) and writes the
    /// `(z, p)` input gradients into `input_grads` (`n x 19`, row-major).
    pub fn backward_batch(
        &mut self,
        upstream: &[f64],
        param_grads: Option<&mut [f64]>,
        input_grads: Option<&mut [f64]>,
    ) {
        let n = self.s.n;
        assert_eq!(upstream.len(), n);
        if n == 0 {
            return;
        }
        let lay = &self.weights.layout;
        let params = &self.weights.params;
        let h = lay.hidden;
        let want_inputs = input_grads.is_some();
        let mut param_grads = param_grads;
        self.s.g_pre[..n].copy_from_slice(upstream);
        for l in (0..NUM_LAYERS).rev() {
            let (nin, nout) = (lay.inputs[l], lay.outputs[l]);
            let w = &params[lay.weight_offset[l]..lay.bias_offset[l]];
            let g = &self.s.g_pre[..n * nout];
            if let Some(pg) = param_grads.as_deref_mut() {
                let (gw, gb) =
                    pg[lay.weight_offset[l]..lay.bias_offset[l] + nout].split_at_mut(nin * nout);
                gemm(
                    nin,
                    n,
                    nout,
                    &self.s.acts[l],
                    (1, nin),
                    g,
                    (nout, 1),
                    1.0,
                    gw,
                    nout,
                );
                for row in g.chunks_exact(nout) {
                    for (gbo, go) in gb.iter_mut().zip(row) {
                        *gbo += go;
                    }
                }
            }
            if l == 0 && !want_inputs {
                break;
            }
            gemm(
                n,
                nout,
                nin,
                g,
                (nout, 1),
                w,
                (1, nout),
                0.0,
                &mut self.s.g_x[..n * nin],
                nin,
            );
            if l == 0 {
                break;
            }
            if l == SKIP_LAYER && want_inputs {
                for r in 0..n {
                    self.s.g_skip[r * INPUT_DIM..(r + 1) * INPUT_DIM]
                        .copy_from_slice(&self.s.g_x[r * nin + h..(r + 1) * nin]);
                }
            }
            let dact = &self.s.dact[l - 1];
            for r in 0..n {
                for o in 0..h {
                    self.s.g_pre[r * h + o] = self.s.g_x[r * nin + o] * dact[r * h + o];
                }
            }
        }
        if let Some(out) = input_grads {
            assert!(out.len() >= n * INPUT_DIM);
            for i in 0..n * INPUT_DIM {
                out[i] = self.s.g_x[i] + self.s.g_skip[i];
            }
        }
    }

    /// Single-row forward pass.
    pub fn forward(&mut self, z: &Code, p: &Vec3) -> f64 {
        self.set_input(0, z, p);
        self.forward_batch(1)[0]
    }

    /// Single-row backward pass after [`forward`](Self::forward).
    pub fn backward(&mut self, upstream: f64, param_grads: Option<&mut [f64]>) -> [f64; INPUT_DIM] {
        let mut g = [0.0; INPUT_DIM];
        self.backward_batch(&[upstream], param_grads, Some(&mut g));
        g
    }

    /// `(s, ds/dz, ds/dp)`.
    pub fn value_and_jacobian(&mut self, z: &Code, p: &Vec3) -> (f64, Code, Vec3) {
        let s = self.forward(z, p);
        let g = self.backward(1.0, None);
        (
            s,
            Code::from_column_slice(&g[..LATENT_DIM]),
            Vec3::new(g[LATENT_DIM], g[LATENT_DIM + 1], g[LATENT_DIM + 2]),
        )
    }
}

fn check_inputs(z: &Code, p: &Vec3) -> Result<()> {
    if z.iter().chain(p.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("decoder input"))
    }
}

/// `s = F(z, p)`.
pub fn decoder_forward(weights: &DecoderWeights, z: &Code, p: &Vec3) -> Result<f64> {
    check_inputs(z, p)?;
    Ok(weights.evaluator().forward(z, p))
}

/// Batched evaluation; identical to repeated [`decoder_forward`] calls.
pub fn decoder_forward_batch(
    weights: &DecoderWeights,
    z: &Code,
    points: &[Vec3],
) -> Result<Vec<f64>> {
    for p in points {
        check_inputs(z, p)?;
    }
    let mut ev = weights.evaluator();
    ev.reserve(points.len());
    for (r, p) in points.iter().enumerate() {
        ev.set_input(r, z, p);
    }
    Ok(ev.forward_batch(points.len()).to_vec())
}

/// `(ds/dz, ds/dp)`.
pub fn decoder_jacobian(weights: &DecoderWeights, z: &Code, p: &Vec3) -> Result<(Code, Vec3)> {
    check_inputs(z, p)?;
    let (_, gz, gp) = weights.evaluator().value_and_jacobian(z, p);
    Ok((gz, gp))
}

/// Gradient of `upstream * F(z, p)` with respect to every parameter, in the
/// flat parameter layout.
pub fn decoder_param_grads(
    weights: &DecoderWeights,
    z: &Code,
    p: &Vec3,
    upstream: f64,
) -> Result<Vec<f64>> {
    check_inputs(z, p)?;
    let mut grads = vec![0.0; weights.params.len()];
    let mut ev = weights.evaluator();
    ev.forward(z, p);
    ev.backward(upstream, Some(&mut grads));
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderTrainConfig {
    pub decoder: DecoderConfig,
    pub epochs: usize,
    pub samples_per_shape: usize,
    pub near_fraction: f64,
    pub near_sigma: f64,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_codes: f64,
    /// Learning rates are multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Clamp distance of the clamped-L1 loss.
    pub clamp: f64,
    /// Weight of the per-sample code penalty `||z||^2`.
    pub code_penalty: f64,
    pub code_init_std: f64,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            epochs: 60,
            samples_per_shape: 4096,
            near_fraction: 0.8,
            near_sigma: 0.025,
            batch_size: 128,
            lr_weights: 1e-3,
            lr_codes: 2e-3,
            lr_decay: 0.5,
            lr_decay_every: 20,
            clamp: 0.1,
            code_penalty: 1e-4,
            code_init_std: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderTraining {
    pub weights: DecoderWeights,
    pub codes: Vec<LatentCode>,
    /// Mean clamped-L1 loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Clamped-L1 loss of one sample and its derivative with respect to the
/// prediction. A sample whose prediction and label both lie beyond the clamp
/// on the same side contributes exactly zero.
#[inline]
pub fn clamped_l1(pred: f64, label: f64, clamp: f64) -> (f64, f64) {
    let cp = pred.clamp(-clamp, clamp);
    let cl = label.clamp(-clamp, clamp);
    let diff = cp - cl;
    let grad = if pred.abs() < clamp && diff != 0.0 {
        diff.signum()
    } else {
        0.0
    };
    (diff.abs(), grad)
}

/// Auto-decoder training over pre-sampled training pairs: one code per shape,
/// optimised jointly with the weights by Adam.
pub fn train_decoder_on_samples(
    samples: &[Vec<SdfSample>],
    cfg: &DecoderTrainConfig,
) -> Result<DecoderTraining> {
    if samples.is_empty() || samples.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("decoder training corpus"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument(
            "decoder training needs epochs >= 1 and batch_size >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = DecoderWeights::random(cfg.decoder, rng.random());
    let mut codes: Vec<f64> = (0..samples.len() * LATENT_DIM)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * cfg.code_init_std
        })
        .collect();

    let mut index: Vec<(u32, u32)> = samples
        .iter()
        .enumerate()
        .flat_map(|(s, v)| (0..v.len()).map(move |i| (s as u32, i as u32)))
        .collect();
    let mut adam_w = Adam::new(weights.params.len(), cfg.lr_weights);
    let mut adam_c = Adam::new(codes.len(), cfg.lr_codes);
    let mut grad_w = vec![0.0; weights.params.len()];
    let mut grad_c = vec![0.0; codes.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    let mut scratch = DecoderScratch::default();
    let mut upstream = vec![0.0; cfg.batch_size];
    let mut grad_in = vec![0.0; cfg.batch_size * INPUT_DIM];
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0 {
            adam_w.lr *= cfg.lr_decay;
            adam_c.lr *= cfg.lr_decay;
        }
        index.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in index.chunks(cfg.batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_c.iter_mut().for_each(|g| *g = 0.0);
            let mut ev = DecoderEval::with_scratch(&weights, core::mem::take(&mut scratch));
            ev.reserve(batch.len());
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (r, &(s, i)) in batch.iter().enumerate() {
                let s = s as usize;
                let z = Code::from_column_slice(&codes[s * LATENT_DIM..(s + 1) * LATENT_DIM]);
                ev.set_input(r, &z, &samples[s][i as usize].point);
            }
            let preds = ev.forward_batch(batch.len());
            for (r, &(s, i)) in batch.iter().enumerate() {
                let (loss, dl) =
                    clamped_l1(preds[r], samples[s as usize][i as usize].sdf, cfg.clamp);
                batch_loss += loss;
                upstream[r] = dl * inv;
            }
            ev.backward_batch(
                &upstream[..batch.len()],
                Some(&mut grad_w),
                Some(&mut grad_in),
            );
            for (r, &(s, _)) in batch.iter().enumerate() {
                let s = s as usize;
                let gc = &mut grad_c[s * LATENT_DIM..(s + 1) * LATENT_DIM];
                let zc = &codes[s * LATENT_DIM..(s + 1) * LATENT_DIM];
                for d in 0..LATENT_DIM {
                    gc[d] += grad_in[r * INPUT_DIM + d] + 2.0 * cfg.code_penalty * zc[d] * inv;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            scratch = ev.into_scratch();
            adam_w.step(&mut weights.params, &grad_w);
            adam_c.step(&mut codes, &grad_c);
            step += 1;
        }
        let mean = epoch_loss / index.len() as f64;
        if !mean.is_finite() || !weights.params.iter().all(|p| p.is_finite()) {
            return Err(Error::Diverged { step, loss: mean });
        }
        history.push(mean);
    }
    let codes = codes
        .chunks(LATENT_DIM)
        .map(Code::from_column_slice)
        .collect();
    Ok(DecoderTraining {
        weights,
        codes,
        loss_history: history,
    })
}

/// Samples training pairs for every shape (sub-seeded by shape index) and runs
/// [`train_decoder_on_samples`].
pub fn train_decoder(
    corpus: &[ProceduralShape],
    cfg: &DecoderTrainConfig,
) -> Result<DecoderTraining> {
    if corpus.is_empty() {
        return Err(Error::Empty("decoder training corpus"));
    }
    let samples = training_samples(corpus, cfg)?;
    train_decoder_on_samples(&samples, cfg)
}

pub fn training_samples(
    corpus: &[ProceduralShape],
    cfg: &DecoderTrainConfig,
) -> Result<Vec<Vec<SdfSample>>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
            sample_sdf_training_pairs(
                s,
                cfg.samples_per_shape,
                seed,
                cfg.near_fraction,
                cfg.near_sigma,
            )
        })
        .collect()
}
