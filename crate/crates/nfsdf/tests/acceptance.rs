//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Criteria 6 to 9 share one trained model at harness scale.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nfsdf::config::{ExperimentConfig, FlowArm, Mode, OptimizerKind, PriorWeight};
use nfsdf::harness::{self, EvalOutcome, ObjectResult};
use nfsdf::io;
use nfsdf::report::{accepted_monotone, read_report};
use nfsdf_core::decoder::{
    decoder_forward, decoder_forward_batch, decoder_jacobian, DecoderConfig, DecoderWeights,
};
use nfsdf_core::flow::{
    flow_forward, flow_inverse, flow_jacobian, flow_logdet, FlowWeights, Mat16, NUM_BLOCKS,
};
use nfsdf_core::mesh::{marching_cubes, Grid};
use nfsdf_core::metrics::{chamfer_bidirectional, chamfer_unidirectional, iou3d, OrientedBox3};
use nfsdf_core::observation::{
    build_rays, depth_term, evaluate_rays_with, mask_loss, mask_term, surface_loss, RayBundle,
    RayConfig, ShapeModel, Tangent, TermOutput,
};
use nfsdf_core::optimizer::Termination;
use nfsdf_core::pose::SimilarityPose;
use nfsdf_core::render::{make_observation_bundle, orbit_cameras, NoiseConfig, PlacedShape};
use nfsdf_core::shape::ProceduralShape;
use nfsdf_core::{nalgebra, Code, Vec3, LATENT_DIM, TANGENT_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const PROBES: usize = 100;

/// Per-probe relative error of an analytic Jacobian against central
/// differences: `max |J - J_fd| / max |J_fd|`.
fn rel_error(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, f) in analytic.iter().zip(fd) {
        for (x, y) in a.iter().zip(f) {
            diff = diff.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    diff / scale
}

fn uniform_code(rng: &mut ChaCha8Rng, r: f64) -> Code {
    Code::from_fn(|_, _| rng.random_range(-r..r))
}

fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> SimilarityPose {
    SimilarityPose {
        rotation: nalgebra::UnitQuaternion::from_euler_angles(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
        ),
        translation: Vec3::from_fn(|_, _| rng.random_range(-spread..spread) * 0.3),
        log_scale: rng.random_range(-spread..spread) * 0.3,
    }
}

fn perturbed_flow(components: usize, seed: u64) -> FlowWeights {
    let mut f = FlowWeights::identity(components, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for p in f.params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let lay = f.layout();
    for p in &mut f.params[lay.out_log_scale..] {
        *p = rng.random_range(-3.0..-1.0);
    }
    f
}

fn step(w: &Code, pose: &SimilarityPose, k: usize, h: f64) -> (Code, SimilarityPose) {
    let mut d = [0.0; TANGENT_DIM];
    d[k] = h;
    (
        w + Code::from_column_slice(&d[..LATENT_DIM]),
        pose.retract(&d[LATENT_DIM..]),
    )
}

fn rows(t: &[Tangent]) -> Vec<Vec<f64>> {
    t.iter().map(|r| r.as_slice().to_vec()).collect()
}

/// Central differences of every residual over the 23-dimensional tangent.
fn fd_rows(f: &dyn Fn(&Code, &SimilarityPose) -> TermOutput, w: &Code, pose: &SimilarityPose, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; TANGENT_DIM]; n];
    for k in 0..TANGENT_DIM {
        let (wp, pp) = step(w, pose, k, FD_STEP);
        let (wm, pm) = step(w, pose, k, -FD_STEP);
        let (a, b) = (f(&wp, &pp), f(&wm, &pm));
        for r in 0..n {
            out[r][k] = (a.residuals[r] - b.residuals[r]) / (2.0 * FD_STEP);
        }
    }
    out
}

/// Which side of the emptiness ramp each ray sample is on. The ray terms are
/// piecewise smooth; a finite-difference stencil is only meaningful when no
/// sample changes side within it.
fn ramp_sides(dec: &DecoderWeights, flow: &FlowWeights, w: &Code, pose: &SimilarityPose, rays: &RayBundle) -> Vec<i8> {
    let z = flow_forward(flow, w).unwrap();
    let mut pts = Vec::new();
    let mut sigma = Vec::new();
    for r in &rays.rays {
        for i in 0..r.samples {
            pts.push(pose.apply(&(r.origin + r.dir * r.sample_depth(i))));
            sigma.push(r.step());
        }
    }
    let inv = 1.0 / pose.scale();
    decoder_forward_batch(dec, &z, &pts)
        .unwrap()
        .iter()
        .zip(&sigma)
        .map(|(s, sig)| {
            let s = s * inv;
            if s <= -sig {
                -1
            } else if s >= *sig {
                1
            } else {
                0
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];

    // decoder at the full width
    let dec = DecoderWeights::random(DecoderConfig::default(), 7);
    for _ in 0..PROBES {
        let z = uniform_code(&mut rng, 0.5);
        let p = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let (gz, gp) = decoder_jacobian(&dec, &z, &p).unwrap();
        let an: Vec<f64> = gz.iter().chain(gp.iter()).copied().collect();
        let fd: Vec<f64> = (0..LATENT_DIM + 3)
            .map(|k| {
                let eval = |h: f64| {
                    let (mut z2, mut p2) = (z, p);
                    if k < LATENT_DIM {
                        z2[k] += h;
                    } else {
                        p2[k - LATENT_DIM] += h;
                    }
                    decoder_forward(&dec, &z2, &p2).unwrap()
                };
                (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
            })
            .collect();
        worst[0] = worst[0].max(rel_error(&[an], &[fd]));
    }

    let flow = perturbed_flow(8, 3);
    for _ in 0..PROBES {
        let w = uniform_code(&mut rng, 2.0);
        let j = flow_jacobian(&flow, &w).unwrap();
        let mut fd = Mat16::zeros();
        for k in 0..LATENT_DIM {
            let mut e = Code::zeros();
            e[k] = FD_STEP;
            let col = (flow_forward(&flow, &(w + e)).unwrap() - flow_forward(&flow, &(w - e)).unwrap())
                / (2.0 * FD_STEP);
            fd.set_column(k, &col);
        }
        let m = |a: &Mat16| (0..16).map(|r| a.row(r).iter().copied().collect()).collect::<Vec<Vec<f64>>>();
        worst[1] = worst[1].max(rel_error(&m(&j), &m(&fd)));
    }

    // the loss terms run through a narrower decoder to keep the stencils cheap
    let small = DecoderWeights::random(DecoderConfig { hidden: 32, ..Default::default() }, 5);
    let model = ShapeModel::with_flow(&small, &flow);
    for _ in 0..PROBES {
        let w = uniform_code(&mut rng, 1.0);
        let pose = random_pose(&mut rng, 0.5);
        let pts: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8))).collect();
        let f = |w: &Code, p: &SimilarityPose| surface_loss(&model, w, p, &pts).unwrap();
        let base = f(&w, &pose);
        let fd = fd_rows(&f, &w, &pose, base.residuals.len());
        worst[2] = worst[2].max(rel_error(&rows(&base.jacobian), &fd));
    }

    // shift the output so the zero level set crosses the sampled rays
    let mut ray_dec = DecoderWeights::random(DecoderConfig { hidden: 16, ..Default::default() }, 5);
    let lay = ray_dec.layout().clone();
    ray_dec.params[lay.bias_offset[7]] = 0.05;
    let model = ShapeModel::with_flow(&ray_dec, &flow);
    let shape = PlacedShape::canonical(ProceduralShape::sphere(0.5));
    let cams = orbit_cameras(1, 2.5, 0.5, 0.3, &Vec3::zeros(), 40.0, 24, 20).unwrap();
    let bundle = make_observation_bundle(&shape, &cams, &NoiseConfig { bbox_margin: 3, ..Default::default() }, 10, 1).unwrap();
    let cfg = RayConfig { samples: 16, budget: 20, box_half: 1.1 };
    let (mut accepted, mut skipped) = (0, 0);
    while accepted < PROBES {
        let w = Code::from_fn(|i, _| 0.05 * i as f64 - 0.4) + uniform_code(&mut rng, 0.3);
        let pose = random_pose(&mut rng, 0.1);
        let rays = build_rays(&bundle.frames[0], &pose, &cfg, rng.random()).unwrap();
        let sides = ramp_sides(&ray_dec, &flow, &w, &pose, &rays);
        let smooth = (0..TANGENT_DIM).all(|k| {
            [FD_STEP, -FD_STEP].iter().all(|h| {
                let (w2, p2) = step(&w, &pose, k, *h);
                ramp_sides(&ray_dec, &flow, &w2, &p2, &rays) == sides
            })
        });
        if !smooth || !sides.contains(&0) {
            skipped += 1;
            assert!(skipped < 10 * PROBES, "too few usable ray probes");
            continue;
        }
        accepted += 1;
        // finite differences need values only; both terms share one pass
        let terms = |w: &Code, p: &SimilarityPose, jacobian: bool| {
            let ev = evaluate_rays_with(&model, w, p, &rays, jacobian).unwrap();
            let (m, d) = (mask_term(&rays, &ev).unwrap(), depth_term(&rays, &ev).unwrap());
            let split = m.residuals.len();
            let mut both = m;
            both.residuals.extend(d.residuals);
            both.jacobian.extend(d.jacobian);
            (both, split)
        };
        let (base, split) = terms(&w, &pose, true);
        let fd = fd_rows(&|w, p| terms(w, p, false).0, &w, &pose, base.residuals.len());
        let an = rows(&base.jacobian);
        worst[3] = worst[3].max(rel_error(&an[..split], &fd[..split]));
        worst[4] = worst[4].max(rel_error(&an[split..], &fd[split..]));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst.iter().all(|e| *e < FD_TOL) && secs < 30.0,
        format!(
            "{PROBES} probes each; worst rel err decoder {:.1e} flow {:.1e} surface {:.1e} mask {:.1e} depth {:.1e}; {skipped} ray probes straddled a ramp kink; {secs:.1} s",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn criterion_2() -> Outcome {
    let flow = harness::load_flow(&lab().cfg.out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut round: f64 = 0.0;
    for _ in 0..1000 {
        let w = Code::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let z = flow_forward(&flow, &w).unwrap();
        let back = flow_inverse(&flow, &z).unwrap();
        round = round.max((back - w).amax());
    }
    let mut logdet: f64 = 0.0;
    for _ in 0..PROBES {
        let w = Code::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let mut fd = Mat16::zeros();
        for k in 0..LATENT_DIM {
            let mut e = Code::zeros();
            e[k] = FD_STEP;
            fd.set_column(
                k,
                &((flow_forward(&flow, &(w + e)).unwrap() - flow_forward(&flow, &(w - e)).unwrap())
                    / (2.0 * FD_STEP)),
            );
        }
        let fd_ld = fd.determinant().abs().ln();
        logdet = logdet.max((fd_ld - flow_logdet(&flow, &w).unwrap()).abs());
    }
    let ortho = (0..NUM_BLOCKS)
        .map(|b| {
            let r = flow.rotation(b);
            (r.transpose() * r - Mat16::identity()).amax()
        })
        .fold(0.0, f64::max);
    outcome(
        round < 1e-8 && logdet < 1e-4 && ortho < 1e-10,
        format!("trained flow: round trip {round:.1e} (1000 probes), log-det vs FD {logdet:.1e} ({PROBES} probes), rotation orthogonality {ortho:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let n = rng.random_range(1..=64);
        let e: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..8) {
                0 => 0.0,
                1 => 1.0,
                2 => rng.random_range(0.0..1e-9),
                3 => 1.0 - rng.random_range(0.0..1e-9),
                _ => rng.random(),
            })
            .collect();
        let p = nfsdf_core::observation::termination_distribution(&e);
        assert_eq!(p.len(), n + 1);
        assert!(p.iter().all(|x| *x >= 0.0));
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let shape = PlacedShape::canonical(ProceduralShape::sphere(0.5));
    let cams = orbit_cameras(2, 2.5, 0.5, 0.3, &Vec3::zeros(), 40.0, 24, 20).unwrap();
    let bundle = make_observation_bundle(&shape, &cams, &NoiseConfig::default(), 0, 1).unwrap();
    for trial in 0..200u64 {
        let mut dec = DecoderWeights::random(DecoderConfig { hidden: 16, ..Default::default() }, trial);
        let lay = dec.layout().clone();
        dec.params[lay.bias_offset[7]] = rng.random_range(-2.0..2.0);
        let flow = perturbed_flow(4, trial);
        let model = ShapeModel::with_flow(&dec, &flow);
        let w = uniform_code(&mut rng, 3.0);
        let pose = random_pose(&mut rng, 0.5);
        let frame = &bundle.frames[(trial % 2) as usize];
        let rays = build_rays(frame, &pose, &RayConfig { samples: 16, budget: 40, box_half: 1.1 }, trial).unwrap();
        let l = mask_loss(&model, &w, &pose, &rays).unwrap().loss;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    outcome(
        worst <= 1e-12 && lo >= 0.0 && hi <= 1.0,
        format!("max |sum p - 1| = {worst:.1e} over 1e5 vectors; mask loss range [{lo:.3}, {hi:.3}] over 200 random models"),
    )
}

fn brute_ucd(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let na = rng.random_range(1..=500);
        let nb = rng.random_range(1..=500);
        let spread = rng.random_range(0.01..3.0);
        let mut cloud = |n| (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-spread..spread))).collect::<Vec<_>>();
        let (a, b) = (cloud(na), cloud(nb));
        let ucd = chamfer_unidirectional(&a, &b).unwrap();
        let bcd = chamfer_bidirectional(&a, &b).unwrap();
        worst = worst.max((ucd - brute_ucd(&a, &b)).abs());
        worst = worst.max((bcd - brute_ucd(&a, &b) - brute_ucd(&b, &a)).abs());
    }
    let unit = |c: Vec3| OrientedBox3::axis_aligned(c, Vec3::repeat(0.5));
    let rotated = OrientedBox3 {
        center: Vec3::new(0.3, -1.0, 0.2),
        rotation: nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, 0.7),
        half_extents: Vec3::new(2.0, 0.8, 0.6),
    };
    let identical = [iou3d(&unit(Vec3::zeros()), &unit(Vec3::zeros())), iou3d(&rotated, &rotated)];
    let disjoint = iou3d(&unit(Vec3::zeros()), &unit(Vec3::new(3.0, 0.0, 0.0)));
    let offsets = [Vec3::x(), Vec3::y(), Vec3::z()].map(|d| iou3d(&unit(Vec3::zeros()), &unit(d * 0.5)));
    let third = offsets.iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let ok = worst <= 1e-12 && identical.iter().all(|v| (v - 1.0).abs() <= 1e-12) && disjoint == 0.0 && third <= 1e-12;
    outcome(
        ok,
        format!(
            "chamfer vs all-pairs max diff {worst:.1e} (60 pairs, <= 500 points); iou identical {:?}, disjoint {disjoint}, half-offset cubes max |iou - 1/3| {third:.1e}",
            identical
        ),
    )
}

fn criterion_5() -> Outcome {
    let grid = Grid::cube(64, 1.5);
    let mesh = marching_cubes(|p| p.norm() - 1.0, &grid, 0.0).unwrap();
    let worst = mesh.vertices.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    let diag = grid.cell_diagonal();
    let chi = mesh.euler_characteristic();
    outcome(
        worst <= 2.0 * diag && mesh.is_watertight() && chi == 2,
        format!(
            "{} triangles; max |r - 1| {worst:.2e} vs 2 cell diagonals {:.2e}; watertight {}; euler {chi}",
            mesh.triangles.len(),
            2.0 * diag,
            mesh.is_watertight()
        ),
    )
}

/// The trained harness-scale model shared by criteria 2 and 6 to 9.
struct Lab {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
}

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            out: dir.path().join("run"),
            ..Default::default()
        };
        cfg.eval.grid_resolution = 32;
        // the harness defaults, spelled out
        cfg.protocol.prior = PriorWeight::Map { variance: 1.5e-6 };
        cfg.objective.lambda_prior = 1e-4;
        let t = Instant::now();
        harness::gen_corpus(&cfg, false).unwrap();
        harness::train(&cfg, false).unwrap();
        println!("  (shared training: {} shapes, {:.1} s)", cfg.corpus.train_count, t.elapsed().as_secs_f64());
        Lab { _dir: dir, cfg }
    })
}

fn run(mode: Mode, trials: usize, arms: &[(OptimizerKind, FlowArm)], tweak: impl Fn(&mut ExperimentConfig)) -> (EvalOutcome, Duration) {
    let mut cfg = lab().cfg.clone();
    cfg.protocol.mode = mode;
    cfg.protocol.trials = Some(trials);
    tweak(&mut cfg);
    let t = Instant::now();
    for (kind, flow) in arms {
        cfg.optimizer.kind = *kind;
        cfg.optimizer.flow = *flow;
        harness::optimize(&cfg, true).unwrap();
    }
    (harness::eval(&cfg, true).unwrap(), t.elapsed())
}

fn values(e: &EvalOutcome, method: &str) -> Vec<(String, f64)> {
    e.objects
        .iter()
        .filter(|o| o.method == method)
        .map(|o| (o.shape_id.clone(), o.value))
        .collect()
}

fn stats(e: &EvalOutcome, method: &str) -> (usize, f64, f64) {
    let v: Vec<f64> = values(e, method).into_iter().map(|(_, v)| v).collect();
    let (_, mean, std) = nfsdf_core::metrics::summary_stats(&v).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    (v.len(), mean, std)
}

const GN_ARMS: [(OptimizerKind, FlowArm); 2] = [(OptimizerKind::Gn, FlowArm::On), (OptimizerKind::Gn, FlowArm::Bypass)];

/// Regression bounds pinned from the first measurement at this seed and
/// scale, with 10% headroom.
const COMPLETE_FLOW_MEAN_BOUND: f64 = 1.547;
const PARTIAL_FLOW_MEAN_BOUND: f64 = 1.788;

fn trend(mode: Mode, shapes: usize, views: usize, budget: f64, bound: f64) -> Outcome {
    let (e, took) = run(mode, shapes, &GN_ARMS, |_| {});
    let (nf, mf, sf) = stats(&e, "gn-flow");
    let (nb, mb, sb) = stats(&e, "gn-bypass");
    let views_ok = e.objects.iter().all(|o| o.views == views);
    let secs = took.as_secs_f64();
    outcome(
        nf == shapes && nb == shapes && views_ok && mf <= mb && sf < sb && mf <= bound && secs < budget,
        format!(
            "{nf}/{nb} shapes x {views} views; chamfer x1000 flow mean {mf:.4} std {sf:.4} | bypass mean {mb:.4} std {sb:.4}; flow mean bound {bound}; {secs:.0} s (limit {budget:.0} s)"
        ),
    )
}

fn criterion_6() -> Outcome {
    trend(Mode::Complete, 30, 1, 600.0, COMPLETE_FLOW_MEAN_BOUND)
}

fn criterion_7() -> Outcome {
    trend(Mode::Partial, 30, 10, 1200.0, PARTIAL_FLOW_MEAN_BOUND)
}

fn criterion_8() -> Outcome {
    let trials = 20;
    let (e, took) = run(Mode::MaskOnly, trials, &GN_ARMS[..1], |_| {});
    // objects whose optimisation or box fit failed count as IoU 0
    let ious: Vec<f64> = values(&e, "gn-flow").into_iter().map(|(_, v)| v).collect();
    let hits = ious.iter().filter(|v| **v >= 0.5).count();
    let mean = ious.iter().sum::<f64>() / trials as f64;
    outcome(
        hits * 5 >= trials * 4,
        format!("{hits}/{trials} trials reach IoU >= 0.5 ({} evaluated); mean IoU {mean:.3}; {:.0} s", ious.len(), took.as_secs_f64()),
    )
}

fn criterion_9() -> Outcome {
    let trials = 10;
    let arms = [(OptimizerKind::Gn, FlowArm::On), (OptimizerKind::FirstOrder, FlowArm::On)];
    let (e, took) = run(Mode::Complete, trials, &arms, |_| {});
    let out = &lab().cfg.out;
    let result = |method: &str, id: &str| -> ObjectResult {
        io::read_json(&harness::results_dir(out, Mode::Complete, method).join(format!("{id}.json"))).unwrap()
    };
    let gn = values(&e, "gn-flow");
    let fo = values(&e, "first-order-flow");
    let mut converged = 0;
    let mut worst_ratio: f64 = 0.0;
    for (id, g) in &gn {
        let Some((_, f)) = fo.iter().find(|(i, _)| i == id) else { continue };
        worst_ratio = worst_ratio.max(g / f).max(f / g);
        if [result("gn-flow", id), result("first-order-flow", id)]
            .iter()
            .all(|r| r.termination == Some(Termination::StepTolerance))
        {
            converged += 1;
        }
    }
    // every Gauss-Newton trajectory logged by any criterion so far
    let (mut logs, mut monotone) = (0, 0);
    for mode in [Mode::Complete, Mode::Partial, Mode::MaskOnly] {
        for method in ["gn-flow", "gn-bypass"] {
            let dir = harness::results_dir(out, mode, method);
            let Ok(entries) = std::fs::read_dir(&dir) else { continue };
            for p in entries.map(|e| e.unwrap().path()) {
                if p.extension().is_some_and(|x| x == "jsonl") {
                    logs += 1;
                    monotone += accepted_monotone(&read_report(&p).unwrap()) as usize;
                }
            }
        }
    }
    outcome(
        gn.len() == trials && fo.len() == trials && converged == trials && worst_ratio <= 2.0 && logs > 0 && monotone == logs,
        format!(
            "{converged}/{trials} trials with both optimisers at step tolerance; worst chamfer ratio {worst_ratio:.3}; GN monotone on {monotone}/{logs} logs; {:.0} s",
            took.as_secs_f64()
        ),
    )
}

fn full_pipeline(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut cfg = common::tiny_config(out);
    harness::gen_corpus(&cfg, false).unwrap();
    harness::train(&cfg, false).unwrap();
    let mut csvs = Vec::new();
    for mode in [Mode::Complete, Mode::Partial, Mode::MaskOnly] {
        cfg.protocol.mode = mode;
        for flow in [FlowArm::On, FlowArm::Bypass] {
            cfg.optimizer.flow = flow;
            harness::optimize(&cfg, false).unwrap();
        }
        harness::eval(&cfg, false).unwrap();
        let p = harness::eval_csv_path(out, mode);
        csvs.push((mode.to_string(), std::fs::read(p).unwrap()));
    }
    csvs
}

fn criterion_10() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = full_pipeline(&a.path().join("run"));
    let rb = full_pipeline(&b.path().join("run"));
    let same = ra.iter().zip(&rb).filter(|(x, y)| x == y).count();
    outcome(
        same == ra.len() && ra.len() == 3,
        format!("{same}/{} metric CSVs byte-identical across two full runs (gen, train, optimize, eval)", ra.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("jacobians match finite differences", criterion_1),
        ("flow bijectivity and log-det", criterion_2),
        ("ray-termination normalisation", criterion_3),
        ("chamfer and iou oracles", criterion_4),
        ("marching cubes on a sphere", criterion_5),
        ("complete-observation trend", criterion_6),
        ("sparse partial-view trend", criterion_7),
        ("mask-only iou", criterion_8),
        ("gauss-newton vs first-order", criterion_9),
        ("pipeline determinism", criterion_10),
    ];
    let only: Vec<usize> = std::env::var("NFSDF_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !o.pass as usize;
        println!("criterion {n:>2} {:<36} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
