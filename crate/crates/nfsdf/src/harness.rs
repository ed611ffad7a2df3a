//! The experiment pipeline behind the CLI subcommands.
//!
//! Output directory layout:
//!
//! ```text
//! corpus/manifest.json                      gen-corpus
//! weights/decoder.nfwt (+ .log.json)        train, stage 1: DECO + CODE
//! weights/flow.nfwt (+ .log.json)           train, stage 2: FLOW
//! bundles/<mode>/<name>.nfob (+ .json)      optimize, on first use
//! results/<mode>/<method>/<name>.{json,obj,jsonl}, summary.json
//! eval/<mode>.csv, eval/<mode>-objects.tsv  eval
//! ```
//!
//! `<name>` is the held-out shape id, with `-vNN` appended per view in the
//! partial protocol. Each command echoes its effective configuration next to
//! its outputs.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nfsdf_core::decoder::{train_decoder, DecoderWeights};
use nfsdf_core::flow::{train_flow, FlowWeights};
use nfsdf_core::mesh::{marching_cubes_batched, sample_mesh_surface, Grid, TriangleMesh};
use nfsdf_core::metrics::{chamfer_bidirectional, fit_oriented_box, iou3d};
use nfsdf_core::observation::ShapeModel;
use nfsdf_core::optimizer::{
    decode_shape, init_pose_pca, optimize_first_order, optimize_gn, prepare_observations,
    OptimizationState, Termination,
};
use nfsdf_core::pose::{PoseReference, SimilarityPose};
use nfsdf_core::render::{
    make_observation_bundle, orbit_cameras, points_only_bundle, ObservationBundle, PlacedShape,
};
use nfsdf_core::shape::{sample_surface_points, ProceduralShape};
use nfsdf_core::{Code, Vec3, LATENT_DIM};
use serde::{Deserialize, Serialize};

use crate::bundle::{read_bundle, write_bundle};
use crate::config::{ExperimentConfig, FlowArm, Mode, OptimizerKind};
use crate::manifest::{CorpusManifest, ShapeEntry};
use crate::obj::{read_obj, write_obj};
use crate::report::{aggregate, write_csv, write_report, MetricRow};
use crate::seed::derive_seed;
use crate::weights::{Section, WeightFile};
use crate::{io, Error, Result};

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("corpus/manifest.json")
}

pub fn decoder_path(out: &Path) -> PathBuf {
    out.join("weights/decoder.nfwt")
}

pub fn flow_path(out: &Path) -> PathBuf {
    out.join("weights/flow.nfwt")
}

pub fn bundle_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join("bundles").join(mode.as_str())
}

pub fn results_dir(out: &Path, mode: Mode, method: &str) -> PathBuf {
    out.join("results").join(mode.as_str()).join(method)
}

pub fn eval_csv_path(out: &Path, mode: Mode) -> PathBuf {
    out.join("eval").join(format!("{mode}.csv"))
}

pub fn eval_objects_path(out: &Path, mode: Mode) -> PathBuf {
    out.join("eval").join(format!("{mode}-objects.tsv"))
}

fn log_path(weights: &Path) -> PathBuf {
    weights.with_extension("log.json")
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists {
            path: path.to_path_buf(),
        });
    }
    Ok(())
}

fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    io::write(&dir.join("config.toml"), cfg.to_toml().as_bytes())
}

fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    cfg.validate()?;
    Ok(cfg.clone().resolved())
}

pub fn load_manifest(out: &Path) -> Result<CorpusManifest> {
    let path = manifest_path(out);
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing corpus manifest {}; run gen-corpus first",
            path.display()
        )));
    }
    let m: CorpusManifest = io::read_json(&path)?;
    m.validate()?;
    Ok(m)
}

/// Writes the corpus manifest. Reruns with the same configuration produce
/// identical bytes.
pub fn gen_corpus(cfg: &ExperimentConfig, force: bool) -> Result<CorpusManifest> {
    let cfg = prepare(cfg)?;
    let path = manifest_path(&cfg.out);
    guard(&path, force)?;
    let m = CorpusManifest::generate(cfg.seed, &cfg.corpus)?;
    io::write_json(&path, &m)?;
    echo_config(&cfg.out.join("corpus"), &cfg)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub stage: String,
    pub seed: u64,
    pub shapes: usize,
    /// Per-epoch mean loss (decoder) or per-step mean code log-likelihood
    /// (flow).
    pub history: Vec<f64>,
    /// RMS entry of the trained codes, over every code and dimension.
    pub code_rms: f64,
}

fn code_rms(codes: &[Code]) -> f64 {
    let sq: f64 = codes.iter().map(|c| c.norm_squared()).sum();
    (sq / (codes.len() * LATENT_DIM) as f64).sqrt()
}

/// Stage 1: decoder weights and one code per training shape.
pub fn train_decoder_stage(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let cfg = prepare(cfg)?;
    let path = decoder_path(&cfg.out);
    guard(&path, force)?;
    let m = load_manifest(&cfg.out)?;
    let shapes = m
        .train
        .iter()
        .map(|e| m.shape(e))
        .collect::<Result<Vec<_>>>()?;
    let t = train_decoder(&shapes, &cfg.decoder)?;
    WeightFile::new(vec![Section::decoder(&t.weights), Section::codes(&t.codes)]).write(&path)?;
    io::write_json(
        &log_path(&path),
        &TrainingLog {
            stage: "decoder".into(),
            seed: cfg.decoder.seed,
            shapes: shapes.len(),
            history: t.loss_history,
            code_rms: code_rms(&t.codes),
        },
    )?;
    echo_config(&cfg.out.join("weights"), &cfg)
}

/// Stage 2: the flow, trained on the frozen stage-1 codes.
pub fn train_flow_stage(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let cfg = prepare(cfg)?;
    let path = flow_path(&cfg.out);
    guard(&path, force)?;
    let dec_path = decoder_path(&cfg.out);
    if !dec_path.exists() {
        return Err(Error::Data(format!(
            "flow training needs the decoder codes in {}; train the decoder first",
            dec_path.display()
        )));
    }
    let codes = WeightFile::read(&dec_path)?
        .codes()
        .map_err(|m| Error::format(&dec_path, m))?;
    let t = train_flow(&codes, &cfg.flow)?;
    WeightFile::new(vec![Section::flow(&t.weights)]).write(&path)?;
    io::write_json(
        &log_path(&path),
        &TrainingLog {
            stage: "flow".into(),
            seed: cfg.flow.seed,
            shapes: codes.len(),
            history: t.log_likelihood,
            code_rms: code_rms(&codes),
        },
    )
}

pub fn train(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    train_decoder_stage(cfg, force)?;
    train_flow_stage(cfg, force)
}

pub fn load_decoder(out: &Path) -> Result<DecoderWeights> {
    let p = decoder_path(out);
    if !p.exists() {
        return Err(Error::Data(format!("missing {}; run train first", p.display())));
    }
    WeightFile::read(&p)?.decoder().map_err(|m| Error::format(&p, m))
}

pub fn load_flow(out: &Path) -> Result<FlowWeights> {
    let p = flow_path(out);
    if !p.exists() {
        return Err(Error::Data(format!("missing {}; run train first", p.display())));
    }
    WeightFile::read(&p)?.flow().map_err(|m| Error::format(&p, m))
}

/// Held-out shapes taking part in the configured protocol.
pub fn trial_entries<'m>(cfg: &ExperimentConfig, m: &'m CorpusManifest) -> &'m [ShapeEntry] {
    let n = cfg.protocol.trials.unwrap_or(usize::MAX).min(m.heldout.len());
    &m.heldout[..n]
}

fn camera_phase(master: u64, mode: Mode, id: &str) -> f64 {
    let s = derive_seed(master, &format!("camera/{mode}/{id}"), 0);
    (s >> 10) as f64 / (1u64 << 53) as f64 * TAU
}

/// Synthesises the observation bundles of one held-out shape; one bundle per
/// optimisation run, keyed by its name.
pub fn observe(
    cfg: &ExperimentConfig,
    mode: Mode,
    entry: &ShapeEntry,
    shape: &ProceduralShape,
) -> Result<Vec<(String, ObservationBundle)>> {
    let p = &cfg.protocol;
    let ring = &p.camera;
    let domain = format!("observe/{mode}/{}", entry.id);
    let placed = PlacedShape::canonical(shape.clone());
    let cameras = |n| {
        orbit_cameras(
            n,
            ring.radius,
            ring.height,
            camera_phase(cfg.seed, mode, &entry.id),
            &Vec3::zeros(),
            ring.focal,
            ring.width,
            ring.image_height,
        )
    };
    Ok(match mode {
        Mode::Complete => {
            let seed = derive_seed(cfg.seed, &domain, 0);
            let pts = sample_surface_points(shape, p.complete_points, seed)?;
            vec![(entry.id.clone(), points_only_bundle(pts))]
        }
        Mode::Partial => cameras(p.partial_views)?
            .iter()
            .enumerate()
            .map(|(v, cam)| {
                let seed = derive_seed(cfg.seed, &domain, v as u64);
                let b = make_observation_bundle(
                    &placed,
                    std::slice::from_ref(cam),
                    &p.noise,
                    p.partial_points,
                    seed,
                )?;
                Ok((format!("{}-v{v:02}", entry.id), b))
            })
            .collect::<Result<_>>()?,
        Mode::MaskOnly => {
            let seed = derive_seed(cfg.seed, &domain, 0);
            let b = make_observation_bundle(&placed, &cameras(p.mask_views)?, &p.noise, 0, seed)?;
            vec![(entry.id.clone(), b)]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub name: String,
    pub shape_id: String,
    pub mode: Mode,
    pub method: String,
    pub error: Option<String>,
    pub lambda_prior: f64,
    pub w: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    pub pose: Option<SimilarityPose>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub converged: bool,
    pub final_loss: Option<f64>,
    pub mesh_triangles: usize,
}

impl ObjectResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub method: String,
    pub objects: Vec<String>,
    pub failures: Vec<(String, String)>,
}

struct Models {
    decoder: DecoderWeights,
    flow: Option<FlowWeights>,
}

impl Models {
    fn shape_model(&self) -> ShapeModel<'_> {
        match &self.flow {
            Some(f) => ShapeModel::with_flow(&self.decoder, f),
            None => ShapeModel::bypass(&self.decoder),
        }
    }
}

/// Runs the configured optimiser on every trial object of the configured
/// protocol. Failures of single objects are recorded and the run continues.
pub fn optimize(cfg: &ExperimentConfig, force: bool) -> Result<RunSummary> {
    let cfg = prepare(cfg)?;
    let mode = cfg.protocol.mode;
    let method = cfg.method_label();
    let dir = results_dir(&cfg.out, mode, &method);
    guard(&dir.join("summary.json"), force)?;
    let m = load_manifest(&cfg.out)?;
    let models = Models {
        decoder: load_decoder(&cfg.out)?,
        flow: match cfg.optimizer.flow {
            FlowArm::On => Some(load_flow(&cfg.out)?),
            FlowArm::Bypass => None,
        },
    };
    let bdir = bundle_dir(&cfg.out, mode);
    let mut summary = RunSummary {
        mode,
        method: method.clone(),
        objects: Vec::new(),
        failures: Vec::new(),
    };
    for entry in trial_entries(&cfg, &m) {
        let shape = m.shape(entry)?;
        let bundles = observe(&cfg, mode, entry, &shape)?;
        for (view, (name, fresh)) in bundles.into_iter().enumerate() {
            let path = bdir.join(format!("{name}.nfob"));
            if force || !path.exists() {
                write_bundle(&path, &fresh)?;
            }
            let bundle = read_bundle(&path)?;
            let mut res = run_object(&cfg, &models, &bundle, &name, view as u64, &dir);
            res.shape_id = entry.id.clone();
            res.method = method.clone();
            if let Some(e) = &res.error {
                summary.failures.push((name.clone(), e.clone()));
            }
            io::write_json(&dir.join(format!("{name}.json")), &res)?;
            summary.objects.push(name);
        }
    }
    io::write_json(&dir.join("summary.json"), &summary)?;
    echo_config(&dir, &cfg)?;
    Ok(summary)
}

fn run_object(
    cfg: &ExperimentConfig,
    models: &Models,
    bundle: &ObservationBundle,
    name: &str,
    view: u64,
    dir: &Path,
) -> ObjectResult {
    let mode = cfg.protocol.mode;
    let ocfg = cfg.objective_for(mode, bundle.fused_points.len());
    let mut res = ObjectResult {
        name: name.into(),
        shape_id: String::new(),
        mode,
        method: String::new(),
        error: None,
        lambda_prior: ocfg.lambda_prior,
        w: None,
        z: None,
        pose: None,
        iterations: 0,
        termination: None,
        converged: false,
        final_loss: None,
        mesh_triangles: 0,
    };
    let run = || -> Result<(OptimizationState, Vec<f64>, TriangleMesh)> {
        if ocfg.lambda_surface > 0.0 && bundle.fused_points.is_empty() {
            return Err(Error::Data("no surface points observed".into()));
        }
        let pose = if ocfg.optimize_pose && bundle.fused_points.len() >= 4 {
            init_pose_pca(&bundle.fused_points, &Vec3::z(), &PoseReference::default())?
        } else {
            SimilarityPose::identity()
        };
        let ray_seed = derive_seed(cfg.seed, &format!("rays/{mode}/{name}"), view);
        let obs = prepare_observations(bundle, &pose, &ocfg, ray_seed)?;
        let model = models.shape_model();
        let init = OptimizationState::new(pose);
        let st = match cfg.optimizer.kind {
            OptimizerKind::Gn => optimize_gn(&model, &obs, &ocfg, &cfg.optimizer.gn, init)?,
            OptimizerKind::FirstOrder => {
                optimize_first_order(&model, &obs, &ocfg, &cfg.optimizer.first_order, init)?
            }
        };
        let shape = decode_shape(&model, &st.w)?;
        let mesh = marching_cubes_batched(|p| shape.sdf_batch(p), &eval_grid(cfg), 0.0)?;
        // meshes are stored in the world frame
        let mesh = mesh.map_vertices(|p| st.pose.inverse_apply(p));
        Ok((st, shape.z.as_slice().to_vec(), mesh))
    };
    match run() {
        Ok((st, z, mesh)) => {
            let written = write_report(&dir.join(format!("{name}.jsonl")), &st.history)
                .and_then(|_| write_obj(&dir.join(format!("{name}.obj")), &mesh));
            if let Err(e) = written {
                res.error = Some(e.to_string());
            }
            res.w = Some(st.w.as_slice().to_vec());
            res.z = Some(z);
            res.pose = Some(st.pose);
            res.iterations = st.iteration;
            res.termination = st.termination;
            res.converged = st.converged;
            res.final_loss = st.final_loss();
            res.mesh_triangles = mesh.triangles.len();
        }
        Err(e) => res.error = Some(e.to_string()),
    }
    res
}

pub fn eval_grid(cfg: &ExperimentConfig) -> Grid {
    Grid::cube(cfg.eval.grid_resolution, cfg.eval.grid_half)
}

/// Per-object metric: bidirectional Chamfer x1000 for the point protocols, 3D
/// IoU of gravity-aligned boxes for mask-only. `None` when the prediction has
/// no surface to compare.
pub fn object_metric(mode: Mode, predicted: &[Vec3], oracle: &[Vec3]) -> Result<Option<f64>> {
    Ok(match mode {
        Mode::MaskOnly => {
            let truth = fit_oriented_box(oracle, &Vec3::z())?;
            // a missing or flat prediction overlaps nothing
            Some(
                fit_oriented_box(predicted, &Vec3::z())
                    .map(|b| iou3d(&b, &truth))
                    .unwrap_or(0.0),
            )
        }
        _ if predicted.is_empty() => None,
        _ => Some(chamfer_bidirectional(predicted, oracle)? * 1000.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetric {
    pub shape_id: String,
    pub method: String,
    /// Mean over the object's successful views.
    pub value: f64,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<MetricRow>,
    pub objects: Vec<ObjectMetric>,
    /// `(method, run name, reason)` for runs left out of the statistics.
    pub skipped: Vec<(String, String, String)>,
}

/// Evaluates every method found under `results/<mode>/`, writing one CSV row
/// per method and the per-object values. Failed optimisations and empty
/// meshes (point protocols) are left out and listed in `skipped`; a method
/// with nothing left gets no row.
pub fn eval(cfg: &ExperimentConfig, force: bool) -> Result<EvalOutcome> {
    let cfg = prepare(cfg)?;
    let mode = cfg.protocol.mode;
    let csv = eval_csv_path(&cfg.out, mode);
    guard(&csv, force)?;
    let m = load_manifest(&cfg.out)?;
    let root = cfg.out.join("results").join(mode.as_str());
    let mut methods: Vec<String> = std::fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|d| d.ok())
        .filter(|d| d.path().join("summary.json").exists())
        .map(|d| d.file_name().to_string_lossy().into_owned())
        .collect();
    methods.sort();
    if methods.is_empty() {
        return Err(Error::Data(format!("no results under {}", root.display())));
    }
    let mut oracle_cache: BTreeMap<String, Vec<Vec3>> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut objects = Vec::new();
    let mut skipped = Vec::new();
    for method in &methods {
        let dir = root.join(method);
        let summary: RunSummary = io::read_json(&dir.join("summary.json"))?;
        let mut per_shape: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for name in &summary.objects {
            let res: ObjectResult = io::read_json(&dir.join(format!("{name}.json")))?;
            let Some(entry) = m.heldout_entry(&res.shape_id) else {
                return Err(Error::Data(format!(
                    "result {name} refers to shape {} which is not in the held-out split",
                    res.shape_id
                )));
            };
            if let Some(e) = &res.error {
                skipped.push((method.clone(), name.clone(), e.clone()));
                continue;
            }
            if !oracle_cache.contains_key(&entry.id) {
                let seed = derive_seed(cfg.seed, &format!("eval/oracle/{}", entry.id), 0);
                let pts = sample_surface_points(&m.shape(entry)?, cfg.eval.oracle_samples, seed)?;
                oracle_cache.insert(entry.id.clone(), pts);
            }
            let mesh = read_obj(&dir.join(format!("{name}.obj")))?;
            let predicted = if mesh.triangles.is_empty() {
                Vec::new()
            } else {
                let seed = derive_seed(cfg.seed, &format!("eval/mesh/{name}"), 0);
                sample_mesh_surface(&mesh, cfg.eval.mesh_samples, seed)?
            };
            match object_metric(mode, &predicted, &oracle_cache[&entry.id])? {
                Some(v) => per_shape.entry(entry.id.clone()).or_default().push(v),
                None => skipped.push((method.clone(), name.clone(), "empty mesh".into())),
            }
        }
        let mut values = Vec::new();
        for (id, v) in per_shape {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            values.push(mean);
            objects.push(ObjectMetric {
                shape_id: id,
                method: method.clone(),
                value: mean,
                views: v.len(),
            });
        }
        if let Some(row) = aggregate(mode.as_str(), method, &values) {
            rows.push(row);
        }
    }
    write_csv(&csv, &rows)?;
    write_objects(&eval_objects_path(&cfg.out, mode), &objects)?;
    Ok(EvalOutcome {
        rows,
        objects,
        skipped,
    })
}

fn write_objects(path: &Path, objects: &[ObjectMetric]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(["shape_id", "method", "value", "views"])
        .map_err(|e| Error::Data(format!("tsv: {e}")))?;
    for o in objects {
        w.serialize(o).map_err(|e| Error::Data(format!("tsv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("tsv: {e}")))?;
    io::write(path, &bytes)
}

pub fn read_objects(path: &Path) -> Result<Vec<ObjectMetric>> {
    let text = io::read_string(path)?;
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Markdown table of every evaluated protocol.
pub fn report(out: &Path) -> Result<String> {
    let mut s = String::from("| trial | method | median | mean | std |\n|---|---|---|---|---|\n");
    let mut any = false;
    for mode in [Mode::Complete, Mode::Partial, Mode::MaskOnly] {
        let p = eval_csv_path(out, mode);
        if !p.exists() {
            continue;
        }
        for r in crate::report::read_csv(&p)? {
            any = true;
            s.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {:.4} |\n",
                r.trial, r.method, r.median, r.mean, r.std
            ));
        }
    }
    if !any {
        return Err(Error::Data(format!(
            "no evaluation tables under {}; run eval first",
            out.join("eval").display()
        )));
    }
    Ok(s)
}
