//! Experiment configuration, read from one TOML file. Every table and field is
//! optional; missing entries take the defaults below.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nfsdf_core::decoder::{DecoderConfig, DecoderTrainConfig};
use nfsdf_core::flow::FlowTrainConfig;
use nfsdf_core::optimizer::{AdamConfig, GnConfig, ObjectiveConfig};
use nfsdf_core::render::NoiseConfig;
use nfsdf_core::shape::FamilyConfig;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, MAX_SEED};
use crate::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusConfig,
    pub decoder: DecoderTrainConfig,
    pub flow: FlowTrainConfig,
    pub protocol: ProtocolConfig,
    pub optimizer: OptimizerConfig,
    pub objective: ObjectiveConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_count: usize,
    pub heldout_count: usize,
    pub family: FamilyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// 1000 canonical-frame surface points per object.
    Complete,
    /// One optimisation per view, 50 back-projected points each.
    Partial,
    /// Silhouettes only: surface and depth weights forced to zero.
    MaskOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gn,
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowArm {
    /// Optimise the normalized code `w`, with `z = flow(w)`.
    On,
    /// Optimise `z` directly; the prior becomes `|z|^2`.
    Bypass,
}

macro_rules! cli_enum {
    ($t:ty, $($v:ident = $s:literal),+) => {
        impl $t {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(format!("unknown value `{s}`")),
                }
            }
        }
    };
}

cli_enum!(Mode, Complete = "complete", Partial = "partial", MaskOnly = "mask-only");
cli_enum!(OptimizerKind, Gn = "gn", FirstOrder = "first-order");
cli_enum!(FlowArm, On = "on", Bypass = "bypass");

/// How the prior weight `lambda_prior` is chosen for surface-point protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorWeight {
    /// Use `objective.lambda_prior` as given.
    Fixed,
    /// `lambda_prior = variance / N` for `N` surface points: the MAP weight
    /// for surface residuals of that variance under a unit Gaussian prior.
    /// Frames without surface points fall back to `objective.lambda_prior`.
    Map { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRing {
    pub radius: f64,
    pub height: f64,
    pub focal: f64,
    pub width: u32,
    pub image_height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: Mode,
    /// Use only the first `trials` held-out shapes; all when absent.
    pub trials: Option<usize>,
    pub complete_points: usize,
    pub partial_points: usize,
    pub partial_views: usize,
    pub mask_views: usize,
    pub camera: CameraRing,
    pub noise: NoiseConfig,
    pub prior: PriorWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub flow: FlowArm,
    pub gn: GnConfig,
    pub first_order: AdamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Marching-cubes samples per axis over `[-grid_half, grid_half]^3`.
    pub grid_resolution: usize,
    pub grid_half: f64,
    pub mesh_samples: usize,
    pub oracle_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            decoder: DecoderTrainConfig {
                decoder: DecoderConfig {
                    hidden: 64,
                    ..Default::default()
                },
                epochs: 40,
                samples_per_shape: 2048,
                lr_decay_every: 13,
                ..Default::default()
            },
            flow: FlowTrainConfig::default(),
            protocol: ProtocolConfig::default(),
            optimizer: OptimizerConfig::default(),
            // the synthetic protocols observe objects at their canonical
            // placement, which is also the initial pose
            // mask-only runs use lambda_prior directly; the point protocols
            // derive it from protocol.prior
            objective: ObjectiveConfig {
                optimize_pose: false,
                lambda_prior: 1e-4,
                ..Default::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_count: 48,
            heldout_count: 30,
            family: FamilyConfig::default(),
        }
    }
}

impl Default for CameraRing {
    fn default() -> Self {
        Self {
            radius: 2.5,
            height: 1.0,
            focal: 60.0,
            width: 64,
            image_height: 48,
        }
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Complete,
            trials: None,
            complete_points: 1000,
            partial_points: 50,
            partial_views: 10,
            mask_views: 3,
            camera: CameraRing::default(),
            noise: NoiseConfig::default(),
            prior: PriorWeight::Map { variance: 1.5e-6 },
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Gn,
            flow: FlowArm::On,
            gn: GnConfig::default(),
            first_order: AdamConfig::default(),
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 64,
            grid_half: 1.2,
            mesh_samples: 2000,
            oracle_samples: 2000,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub optimizer: Option<OptimizerKind>,
    pub flow: Option<FlowArm>,
}

impl ExperimentConfig {
    /// Fields missing from `text` keep the values of [`ExperimentConfig::default`],
    /// including fields of partially given nested tables.
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let user: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| e.to_string())?;
        merge(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Reads `path`, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_toml(&io::read_string(p)?)
                .map_err(|m| Error::Usage(format!("{}: {m}", p.display()))),
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(m) = o.mode {
            self.protocol.mode = m;
        }
        if let Some(k) = o.optimizer {
            self.optimizer.kind = k;
        }
        if let Some(f) = o.flow {
            self.optimizer.flow = f;
        }
        self
    }

    /// The training seeds made explicit from the master seed.
    pub fn resolved(mut self) -> Self {
        self.decoder.seed = derive_seed(self.seed, "train/decoder", 0);
        self.flow.seed = derive_seed(self.seed, "train/flow", 0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(m.into()));
        if self.seed > MAX_SEED {
            return bad("seed must be at most 2^63 - 1");
        }
        if self.corpus.train_count < 2 {
            return bad("corpus.train_count must be at least 2 (the flow needs 2 codes)");
        }
        if self.corpus.heldout_count == 0 {
            return bad("corpus.heldout_count must be at least 1");
        }
        self.corpus.family.validate()?;
        self.objective.validate()?;
        let p = &self.protocol;
        if p.complete_points == 0 || p.partial_points == 0 {
            return bad("protocol point counts must be positive");
        }
        if p.partial_views == 0 || p.mask_views == 0 {
            return bad("protocol view counts must be positive");
        }
        if p.trials == Some(0) {
            return bad("protocol.trials must be positive");
        }
        if let PriorWeight::Map { variance } = p.prior {
            if !(variance >= 0.0 && variance.is_finite()) {
                return bad("protocol.prior.variance must be finite and non-negative");
            }
        }
        let e = &self.eval;
        if e.grid_resolution < 2 || !(e.grid_half > 0.0) {
            return bad("eval.grid_resolution must be >= 2 and eval.grid_half positive");
        }
        if e.mesh_samples == 0 || e.oracle_samples == 0 {
            return bad("eval sample counts must be positive");
        }
        Ok(())
    }

    /// The objective weights used for `mode` with `points` surface points.
    /// The point protocols use the surface and prior terms only; mask-only
    /// uses the mask and prior terms only.
    pub fn objective_for(&self, mode: Mode, points: usize) -> ObjectiveConfig {
        let mut o = self.objective;
        if mode == Mode::MaskOnly {
            return o.mask_only();
        }
        o.lambda_mask = 0.0;
        o.lambda_depth = 0.0;
        if let PriorWeight::Map { variance } = self.protocol.prior {
            if points > 0 {
                o.lambda_prior = variance / points as f64;
            }
        }
        o
    }

    pub fn method_label(&self) -> String {
        let flow = match self.optimizer.flow {
            FlowArm::On => "flow",
            FlowArm::Bypass => "bypass",
        };
        format!("{}-{flow}", self.optimizer.kind)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
