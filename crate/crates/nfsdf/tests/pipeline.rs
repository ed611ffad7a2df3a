mod common;

use std::path::Path;
use std::sync::OnceLock;

use nfsdf::bundle::{decode_bundle, encode_bundle, read_bundle};
use nfsdf::config::{ExperimentConfig, FlowArm, Mode, OptimizerKind};
use nfsdf::harness::{self, ObjectResult};
use nfsdf::obj::{encode_obj, read_obj};
use nfsdf::report::{accepted_monotone, read_csv, read_report};
use nfsdf::weights::WeightFile;
use nfsdf::{io, Error};
use nfsdf_core::decoder::decoder_forward;
use nfsdf_core::Vec3;

/// One trained tiny run shared by the tests in this file.
fn trained() -> &'static (tempfile::TempDir, ExperimentConfig) {
    static RUN: OnceLock<(tempfile::TempDir, ExperimentConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::tiny_config(&dir.path().join("run"));
        harness::gen_corpus(&cfg, false).unwrap();
        harness::train(&cfg, false).unwrap();
        (dir, cfg)
    })
}

fn with(cfg: &ExperimentConfig, mode: Mode, kind: OptimizerKind, flow: FlowArm) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.protocol.mode = mode;
    c.optimizer.kind = kind;
    c.optimizer.flow = flow;
    c
}

fn result(cfg: &ExperimentConfig, name: &str) -> ObjectResult {
    let dir = harness::results_dir(&cfg.out, cfg.protocol.mode, &cfg.method_label());
    io::read_json(&dir.join(format!("{name}.json"))).unwrap()
}

#[test]
fn weights_reload_bitwise() {
    let (_, cfg) = trained();
    let f = WeightFile::read(&harness::decoder_path(&cfg.out)).unwrap();
    let bytes = std::fs::read(harness::decoder_path(&cfg.out)).unwrap();
    assert_eq!(f.encode(), bytes);
    let dec = f.decoder().unwrap();
    let codes = f.codes().unwrap();
    assert_eq!(codes.len(), 6);
    let again = harness::load_decoder(&cfg.out).unwrap();
    let p = Vec3::new(0.1, 0.2, -0.3);
    assert_eq!(
        decoder_forward(&dec, &codes[0], &p).unwrap().to_bits(),
        decoder_forward(&again, &codes[0], &p).unwrap().to_bits()
    );
    let log: harness::TrainingLog =
        io::read_json(&cfg.out.join("weights/decoder.log.json")).unwrap();
    assert_eq!(log.history.len(), 4);
    let sq: f64 = codes.iter().map(|c| c.norm_squared()).sum();
    assert_eq!(log.code_rms, (sq / (codes.len() * 16) as f64).sqrt());
}

#[test]
fn mask_only_emits_meshes_and_bypass_optimizes_z() {
    let (_, base) = trained();
    let mut cfg = with(base, Mode::MaskOnly, OptimizerKind::Gn, FlowArm::Bypass);
    cfg.out = base.out.clone();
    cfg.protocol.trials = Some(1);
    let s = harness::optimize(&cfg, true).unwrap();
    assert!(s.failures.is_empty(), "{:?}", s.failures);
    let r = result(&cfg, "heldout-0000");
    // bypass arm: the optimised variable is the code itself
    assert_eq!(r.w, r.z);
    // mask-only weights
    let o = cfg.objective_for(Mode::MaskOnly, 0);
    assert_eq!((o.lambda_surface, o.lambda_depth), (0.0, 0.0));
    let dir = harness::results_dir(&cfg.out, Mode::MaskOnly, "gn-bypass");
    let mesh = read_obj(&dir.join("heldout-0000.obj")).unwrap();
    assert_eq!(mesh.triangles.len(), r.mesh_triangles);
    let lines = read_report(&dir.join("heldout-0000.jsonl")).unwrap();
    assert!(lines.iter().all(|l| l.surface == Some(0.0) && l.depth == Some(0.0)));
    assert!(accepted_monotone(&lines));
}

#[test]
fn identical_seeds_give_identical_results() {
    let (_, base) = trained();
    let mut a = with(base, Mode::Complete, OptimizerKind::Gn, FlowArm::On);
    a.protocol.trials = Some(1);
    harness::optimize(&a, true).unwrap();
    let dir = harness::results_dir(&a.out, Mode::Complete, "gn-flow");
    let read = |n: &str| std::fs::read(dir.join(n)).unwrap();
    let first = (read("heldout-0000.json"), read("heldout-0000.obj"), read("heldout-0000.jsonl"));
    harness::optimize(&a, true).unwrap();
    let second = (read("heldout-0000.json"), read("heldout-0000.obj"), read("heldout-0000.jsonl"));
    assert!(first == second);
}

#[test]
fn bundles_and_meshes_round_trip_on_disk() {
    let (_, base) = trained();
    let mut cfg = with(base, Mode::Partial, OptimizerKind::Gn, FlowArm::On);
    cfg.protocol.trials = Some(1);
    let s = harness::optimize(&cfg, true).unwrap();
    assert_eq!(s.objects, ["heldout-0000-v00", "heldout-0000-v01"]);
    let path = harness::bundle_dir(&cfg.out, Mode::Partial).join("heldout-0000-v01.nfob");
    let bytes = std::fs::read(&path).unwrap();
    let b = read_bundle(&path).unwrap();
    assert_eq!(b.frames.len(), 1);
    assert_eq!(b.fused_points.len(), 30);
    assert_eq!(encode_bundle(&decode_bundle(&bytes).unwrap()), bytes);
    let obj = harness::results_dir(&cfg.out, Mode::Partial, "gn-flow").join("heldout-0000-v00.obj");
    let text = std::fs::read_to_string(&obj).unwrap();
    assert_eq!(encode_obj(&read_obj(&obj).unwrap()), text);
}

#[test]
fn first_order_runs_and_logs() {
    let (_, base) = trained();
    let mut cfg = with(base, Mode::Complete, OptimizerKind::FirstOrder, FlowArm::On);
    cfg.protocol.trials = Some(1);
    cfg.optimizer.first_order.iterations = 30;
    harness::optimize(&cfg, true).unwrap();
    let r = result(&cfg, "heldout-0000");
    assert!(r.ok());
    let dir = harness::results_dir(&cfg.out, Mode::Complete, "first-order-flow");
    let lines = read_report(&dir.join("heldout-0000.jsonl")).unwrap();
    assert!(!lines.is_empty() && lines.len() <= 31);
}

/// The full pipeline in a fresh directory, evaluated on the partial protocol.
fn full_run(out: &Path) -> (Vec<u8>, Vec<u8>) {
    let mut cfg = common::tiny_config(out);
    harness::gen_corpus(&cfg, false).unwrap();
    harness::train(&cfg, false).unwrap();
    cfg.protocol.mode = Mode::Partial;
    for flow in [FlowArm::On, FlowArm::Bypass] {
        cfg.optimizer.flow = flow;
        harness::optimize(&cfg, false).unwrap();
    }
    let e = harness::eval(&cfg, false).unwrap();
    assert_eq!(e.rows.len(), 2);
    (
        std::fs::read(harness::eval_csv_path(out, Mode::Partial)).unwrap(),
        std::fs::read(harness::eval_objects_path(out, Mode::Partial)).unwrap(),
    )
}

#[test]
fn pipeline_is_deterministic_and_partial_averages_views() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = full_run(&a.path().join("run"));
    let rb = full_run(&b.path().join("run"));
    assert_eq!(ra, rb);

    let out = a.path().join("run");
    let objects = harness::read_objects(&harness::eval_objects_path(&out, Mode::Partial)).unwrap();
    let rows = read_csv(&harness::eval_csv_path(&out, Mode::Partial)).unwrap();
    for row in &rows {
        let vals: Vec<f64> = objects
            .iter()
            .filter(|o| o.method == row.method)
            .map(|o| o.value)
            .collect();
        assert_eq!(vals.len(), 2);
        let mean = vals.iter().sum::<f64>() / 2.0;
        assert!((row.mean - mean).abs() < 1e-12);
    }
    // each object value is the mean of its two views, recomputed here
    let cfg = {
        let mut c = common::tiny_config(&out).resolved();
        c.protocol.mode = Mode::Partial;
        c
    };
    let m = harness::load_manifest(&out).unwrap();
    let entry = &m.heldout[0];
    let oracle = nfsdf_core::shape::sample_surface_points(
        &m.shape(entry).unwrap(),
        cfg.eval.oracle_samples,
        nfsdf::seed::derive_seed(cfg.seed, &format!("eval/oracle/{}", entry.id), 0),
    )
    .unwrap();
    let dir = harness::results_dir(&out, Mode::Partial, "gn-flow");
    let per_view: Vec<f64> = (0..2)
        .map(|v| {
            let name = format!("{}-v{v:02}", entry.id);
            let mesh = read_obj(&dir.join(format!("{name}.obj"))).unwrap();
            let seed = nfsdf::seed::derive_seed(cfg.seed, &format!("eval/mesh/{name}"), 0);
            let pts = nfsdf_core::mesh::sample_mesh_surface(&mesh, cfg.eval.mesh_samples, seed).unwrap();
            nfsdf_core::metrics::chamfer_bidirectional(&pts, &oracle).unwrap() * 1000.0
        })
        .collect();
    let got = objects
        .iter()
        .find(|o| o.method == "gn-flow" && o.shape_id == entry.id)
        .unwrap();
    assert_eq!(got.views, 2);
    assert!((got.value - (per_view[0] + per_view[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn eval_rejects_unknown_shape_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (_, base) = trained();
    // a copy of the trained run whose result names a shape outside the split
    let out = dir.path().join("run");
    let mut cfg = with(base, Mode::Complete, OptimizerKind::Gn, FlowArm::On);
    cfg.out = out.clone();
    cfg.protocol.trials = Some(1);
    for sub in ["corpus/manifest.json", "weights/decoder.nfwt", "weights/flow.nfwt"] {
        let to = out.join(sub);
        std::fs::create_dir_all(to.parent().unwrap()).unwrap();
        std::fs::copy(base.out.join(sub), to).unwrap();
    }
    harness::optimize(&cfg, false).unwrap();
    let rdir = harness::results_dir(&out, Mode::Complete, "gn-flow");
    let mut r: ObjectResult = io::read_json(&rdir.join("heldout-0000.json")).unwrap();
    r.shape_id = "train-0001".into();
    io::write_json(&rdir.join("heldout-0000.json"), &r).unwrap();
    let err = harness::eval(&cfg, false).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn map_prior_rule_sets_lambda_per_point_count() {
    let (_, base) = trained();
    let mut cfg = base.clone();
    cfg.protocol.prior = nfsdf::config::PriorWeight::Map { variance: 1e-6 };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b;
    assert!(close(cfg.objective_for(Mode::Complete, 1000).lambda_prior, 1e-9));
    assert!(close(cfg.objective_for(Mode::Partial, 50).lambda_prior, 2e-8));
    assert_eq!(
        cfg.objective_for(Mode::MaskOnly, 0).lambda_prior,
        cfg.objective.lambda_prior
    );
}
